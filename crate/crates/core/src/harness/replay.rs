//! Command logs: one row per physics tick, replayable open-loop.
//!
//! Format: header [`COMMAND_HEADER`], then `tick,stepped,roll,pitch,vertical,yaw_rate`
//! with `stepped` 0 or 1 and floats in shortest round-trip form.

use std::io::{self, BufRead, Write};

use crate::servo::ControlCommand;
use crate::sim::{self, DroneParams, DroneState, FlightLog, PathSample, SimError};

pub const COMMAND_HEADER: &str = "tick,stepped,roll,pitch,vertical,yaw_rate";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandRow {
    pub tick: u64,
    /// False while the vehicle sat on the ground.
    pub stepped: bool,
    pub command: ControlCommand,
}

pub fn write_commands<W: Write>(mut out: W, rows: &[CommandRow]) -> io::Result<()> {
    writeln!(out, "{COMMAND_HEADER}")?;
    for r in rows {
        let c = r.command;
        writeln!(out, "{},{},{},{},{},{}", r.tick, u8::from(r.stepped), c.roll, c.pitch, c.vertical, c.yaw_rate)?;
    }
    Ok(())
}

pub fn read_commands<R: BufRead>(input: R) -> Result<Vec<CommandRow>, SimError> {
    let bad = |line: usize, reason: &str| SimError::Format { line, reason: reason.to_string() };
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == COMMAND_HEADER => {}
        _ => return Err(bad(1, "missing command-log header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| bad(n, &e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 6 {
            return Err(bad(n, "expected six columns"));
        }
        let tick = cols[0].parse().map_err(|_| bad(n, "bad tick"))?;
        let stepped = match cols[1] {
            "0" => false,
            "1" => true,
            _ => return Err(bad(n, "stepped must be 0 or 1")),
        };
        let f: Result<Vec<f64>, _> = cols[2..].iter().map(|v| v.parse::<f64>()).collect();
        let f = f.map_err(|_| bad(n, "bad command value"))?;
        let command = ControlCommand { roll: f[0], pitch: f[1], vertical: f[2], yaw_rate: f[3], ts_ms: 0 };
        if !command.is_finite() {
            return Err(bad(n, "non-finite command"));
        }
        rows.push(CommandRow { tick, stepped, command });
    }
    Ok(rows)
}

/// Re-flies a command log from `start` and returns the sampled path. A run
/// recorded by the harness replays to the identical path.
pub fn replay(
    start: DroneState,
    params: &DroneParams,
    rows: &[CommandRow],
    dt: f64,
    log_period: f64,
) -> Result<Vec<PathSample>, SimError> {
    let mut log = FlightLog::new(log_period);
    let mut s = start;
    log.record(&s);
    for (i, row) in rows.iter().enumerate() {
        s = if row.stepped { sim::step(&s, &row.command, dt, params)? } else { DroneState { t: s.t + dt, ..s } };
        // landing completes when the vehicle touches down between a moving
        // tick and a grounded one
        if row.stepped && rows.get(i + 1).is_some_and(|next| !next.stepped) && s.position[2] <= 0.0 {
            s = sim::settle(&s);
        }
        log.record(&s);
    }
    Ok(sim::flight_path(&log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![
            CommandRow { tick: 0, stepped: false, command: ControlCommand::HOVER },
            CommandRow { tick: 1, stepped: true, command: ControlCommand { roll: 0.1, pitch: -1.0 / 3.0, vertical: 1.0, yaw_rate: 1e-17, ts_ms: 0 } },
        ];
        let mut buf = Vec::new();
        write_commands(&mut buf, &rows).unwrap();
        assert_eq!(read_commands(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = format!("{COMMAND_HEADER}\n0,1,0,0,0,0\n1,2,0,0,0,0\n");
        assert!(matches!(read_commands(text.as_bytes()), Err(SimError::Format { line: 3, .. })));
        assert!(matches!(read_commands(&b"nope\n"[..]), Err(SimError::Format { line: 1, .. })));
    }
}
