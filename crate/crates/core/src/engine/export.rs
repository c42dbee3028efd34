//! CSV exports of trajectories and planned-versus-actual deviation.

use std::io::Write;

use crate::world::UavStatus;

use super::snapshot::WorldSnapshot;

pub const TRAJECTORY_HEADER: [&str; 8] = ["t", "uav", "x", "y", "z", "xt", "yt", "zt"];
pub const DEVIATION_HEADER: [&str; 8] = [
    "t", "uav", "planned_x", "planned_y", "planned_z", "actual_x", "actual_y", "actual_z",
];

/// One row per UAV per snapshot: actual position and reference target.
pub struct TrajectoryWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut csv = csv::Writer::from_writer(out);
        csv.write_record(TRAJECTORY_HEADER)?;
        Ok(Self { csv })
    }

    pub fn record(&mut self, snapshot: &WorldSnapshot) -> csv::Result<()> {
        for u in &snapshot.uavs {
            let p = u.state.position;
            let r = u.reference.position;
            self.csv.write_record([
                snapshot.time.to_string(),
                u.id.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.z.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.z.to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.csv.flush()?;
        self.csv.into_inner().map_err(|e| e.into_error())
    }
}

/// Planned-versus-actual rows for airborne UAVs only.
pub struct DeviationWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> DeviationWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut csv = csv::Writer::from_writer(out);
        csv.write_record(DEVIATION_HEADER)?;
        Ok(Self { csv })
    }

    pub fn record(&mut self, snapshot: &WorldSnapshot) -> csv::Result<()> {
        for u in snapshot.uavs.iter().filter(|u| u.status == UavStatus::Flying) {
            let p = u.state.position;
            let r = u.reference.position;
            self.csv.write_record([
                snapshot.time.to_string(),
                u.id.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.z.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.z.to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.csv.flush()?;
        self.csv.into_inner().map_err(|e| e.into_error())
    }
}
