use serde::{Deserialize, Serialize};

use super::{Environment, Position, PropagationError};

/// Room boundary a ray can bounce off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Surface {
    WallX0,
    WallX1,
    WallY0,
    WallY1,
    Floor,
    Ceiling,
}

/// One propagation path between a transmitter and a receiver.
///
/// Departure angles are taken at the transmitter along the outgoing
/// direction; arrival angles at the receiver point back along the incoming
/// direction, so both can be fed to the gain of a sector located at that end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub length_m: f64,
    pub departure_azimuth_deg: f64,
    pub departure_elevation_deg: f64,
    pub arrival_azimuth_deg: f64,
    pub arrival_elevation_deg: f64,
    pub reflections: u32,
    pub loss_db: f64,
}

/// Image of a coordinate along one axis of the box `[0, extent]`.
#[derive(Debug, Clone, Copy)]
struct AxisImage {
    coord: f64,
    low_hits: u32,
    high_hits: u32,
}

impl AxisImage {
    fn reflections(&self) -> u32 {
        self.low_hits + self.high_hits
    }
}

/// All images of `c` on an axis with at most `max` reflections, in a fixed
/// order: direct, then increasing reflection count, low wall first.
fn axis_images(c: f64, extent: f64, max: u32) -> Vec<AxisImage> {
    let mut out = vec![AxisImage {
        coord: c,
        low_hits: 0,
        high_hits: 0,
    }];
    for n in 1..=max {
        if n % 2 == 1 {
            // 2kL - c with |2k - 1| = n: k = (1 - n)/2 (low first) or (n + 1)/2.
            let k_low = (1 - n as i64) / 2;
            let k_high = (n as i64 + 1) / 2;
            for k in [k_low, k_high] {
                let (low, high) = if k >= 1 {
                    (k as u32 - 1, k as u32)
                } else {
                    ((1 - k) as u32, (-k) as u32)
                };
                out.push(AxisImage {
                    coord: 2.0 * k as f64 * extent - c,
                    low_hits: low,
                    high_hits: high,
                });
            }
        } else {
            // 2kL + c with |2k| = n.
            let m = (n / 2) as i64;
            for k in [-m, m] {
                out.push(AxisImage {
                    coord: 2.0 * k as f64 * extent + c,
                    low_hits: m as u32,
                    high_hits: m as u32,
                });
            }
        }
    }
    out
}

fn angles(dx: f64, dy: f64, dz: f64) -> (f64, f64) {
    let az = dy.atan2(dx).to_degrees();
    let el = dz.atan2(dx.hypot(dy)).to_degrees();
    (az, el)
}

/// Image-method rays from `tx` to `rx` in the rectangular room of `env`.
///
/// The direct ray comes first. Reflected rays follow with at most
/// `max_reflections` bounces in total, each accumulating the reflection loss
/// of every surface it hits.
pub fn trace_rays(
    env: &Environment,
    tx: &Position,
    rx: &Position,
    max_reflections: u32,
) -> Result<Vec<Ray>, PropagationError> {
    env.check_inside(tx)?;
    env.check_inside(rx)?;
    if tx.distance(rx) == 0.0 {
        return Err(PropagationError::Coincident(*tx));
    }
    let xs = axis_images(rx.x, env.width_m, max_reflections);
    let ys = axis_images(rx.y, env.depth_m, max_reflections);
    let zs = axis_images(rx.z, env.height_m, max_reflections);
    let loss = &env.reflection_loss_db;

    let mut rays = Vec::new();
    for ix in &xs {
        for iy in &ys {
            let used = ix.reflections() + iy.reflections();
            if used > max_reflections {
                continue;
            }
            for iz in &zs {
                let reflections = used + iz.reflections();
                if reflections > max_reflections {
                    continue;
                }
                let (dx, dy, dz) = (ix.coord - tx.x, iy.coord - tx.y, iz.coord - tx.z);
                let length_m = (dx * dx + dy * dy + dz * dz).sqrt();
                let (departure_azimuth_deg, departure_elevation_deg) = angles(dx, dy, dz);
                // Each bounce on an axis flips that component of the direction.
                let flip = |v: f64, img: &AxisImage| if img.reflections() % 2 == 1 { -v } else { v };
                let (arrival_azimuth_deg, arrival_elevation_deg) =
                    angles(-flip(dx, ix), -flip(dy, iy), -flip(dz, iz));
                let loss_db = f64::from(ix.low_hits) * loss.wall_x0
                    + f64::from(ix.high_hits) * loss.wall_x1
                    + f64::from(iy.low_hits) * loss.wall_y0
                    + f64::from(iy.high_hits) * loss.wall_y1
                    + f64::from(iz.low_hits) * loss.floor
                    + f64::from(iz.high_hits) * loss.ceiling;
                rays.push(Ray {
                    length_m,
                    departure_azimuth_deg,
                    departure_elevation_deg,
                    arrival_azimuth_deg,
                    arrival_elevation_deg,
                    reflections,
                    loss_db,
                });
            }
        }
    }
    Ok(rays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::ReflectionLoss;

    fn room() -> Environment {
        Environment {
            width_m: 10.0,
            depth_m: 8.0,
            height_m: 3.0,
            ..Environment::default()
        }
    }

    #[test]
    fn three_four_five_los() {
        let rays = trace_rays(
            &room(),
            &Position::new(0.0, 0.0, 1.0),
            &Position::new(3.0, 4.0, 1.0),
            0,
        )
        .unwrap();
        assert_eq!(rays.len(), 1);
        assert!((rays[0].length_m - 5.0).abs() < 1e-12);
        assert_eq!(rays[0].reflections, 0);
        assert_eq!(rays[0].loss_db, 0.0);
    }

    #[test]
    fn ray_counts_by_order() {
        let tx = Position::new(2.0, 3.0, 2.5);
        let rx = Position::new(7.0, 5.0, 1.0);
        assert_eq!(trace_rays(&room(), &tx, &rx, 1).unwrap().len(), 7);
        // 1 + 6 first order + 6 same-axis double + 12 cross-axis double
        assert_eq!(trace_rays(&room(), &tx, &rx, 2).unwrap().len(), 25);
    }

    #[test]
    fn floor_bounce_matches_mirror_point() {
        let env = room();
        let tx = Position::new(1.0, 2.0, 1.0);
        let rx = Position::new(6.0, 5.0, 1.0);
        let rays = trace_rays(&env, &tx, &rx, 1).unwrap();
        let floor = rays
            .iter()
            .find(|r| r.reflections == 1 && r.departure_elevation_deg < 0.0 && {
                let horiz = ((5.0f64).powi(2) + 3.0f64.powi(2)).sqrt();
                (r.length_m.powi(2) - horiz.powi(2) - 4.0).abs() < 1e-9
            })
            .expect("floor ray");
        // Mirror of rx through z = 0 is (6, 5, -1).
        let mirrored = tx.distance(&Position::new(6.0, 5.0, -1.0));
        assert!((floor.length_m - mirrored).abs() < 1e-12);
        assert_eq!(floor.loss_db, env.reflection_loss_db.floor);
        // Specular: arrives from below at the same angle it departed.
        assert!((floor.arrival_elevation_deg - floor.departure_elevation_deg).abs() < 1e-12);
    }

    #[test]
    fn ceiling_bounce_path_and_loss() {
        let mut env = room();
        env.reflection_loss_db = ReflectionLoss {
            ceiling: 7.0,
            ..ReflectionLoss::uniform(3.0)
        };
        let tx = Position::new(1.0, 2.0, 1.0);
        let rx = Position::new(6.0, 5.0, 1.0);
        let rays = trace_rays(&env, &tx, &rx, 1).unwrap();
        let mirrored = tx.distance(&Position::new(6.0, 5.0, 5.0));
        let ceiling = rays.iter().find(|r| (r.length_m - mirrored).abs() < 1e-12).unwrap();
        assert_eq!(ceiling.loss_db, 7.0);
        assert!(ceiling.departure_elevation_deg > 0.0);
    }

    #[test]
    fn reflected_paths_no_shorter_than_los() {
        let env = room();
        let tx = Position::new(9.0, 1.0, 2.9);
        let rx = Position::new(0.5, 7.5, 0.2);
        let rays = trace_rays(&env, &tx, &rx, 2).unwrap();
        let los = tx.distance(&rx);
        assert!((rays[0].length_m - los).abs() < 1e-12);
        for r in &rays {
            assert!(r.length_m >= los - 1e-12);
            assert!(r.reflections <= 2);
        }
    }

    #[test]
    fn los_arrival_is_reverse_of_departure() {
        let tx = Position::new(1.0, 1.0, 2.0);
        let rx = Position::new(4.0, 5.0, 1.0);
        let r = trace_rays(&room(), &tx, &rx, 0).unwrap()[0];
        let back = trace_rays(&room(), &rx, &tx, 0).unwrap()[0];
        assert!((r.arrival_azimuth_deg - back.departure_azimuth_deg).abs() < 1e-12);
        assert!((r.arrival_elevation_deg - back.departure_elevation_deg).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let p = Position::new(1.0, 1.0, 1.0);
        assert!(matches!(
            trace_rays(&room(), &p, &p, 1),
            Err(PropagationError::Coincident(_))
        ));
        assert!(matches!(
            trace_rays(&room(), &p, &Position::new(11.0, 1.0, 1.0), 1),
            Err(PropagationError::OutsideEnvironment(_))
        ));
    }

    #[test]
    fn deterministic() {
        let tx = Position::new(2.0, 3.0, 2.5);
        let rx = Position::new(7.0, 5.0, 1.0);
        assert_eq!(
            trace_rays(&room(), &tx, &rx, 2).unwrap(),
            trace_rays(&room(), &tx, &rx, 2).unwrap()
        );
    }
}
