//! `schedule-dump`: print every step's bridge variance and reverse-pair
//! coefficients as CSV for inspection or plotting.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use cpdm_core::schedule::BridgeSchedule;
use cpdm_core::{Error, Result};

use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct ScheduleDumpArgs {
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn run(cfg: &RunConfig, args: &ScheduleDumpArgs) -> Result<()> {
    let csv = render(cfg.t_total, cfg.s_var)?;
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(Error::io(path)),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn render(t_total: usize, s_var: f64) -> Result<String> {
    let sched = BridgeSchedule::new(t_total, s_var)?;
    let mut csv = String::from("t,m,delta,c_x,c_y,c_eps,tilde_delta\n");
    for t in 1..=t_total {
        let pair = sched.consecutive(t)?;
        writeln!(
            csv,
            "{t},{},{},{},{},{},{}",
            sched.m(t),
            sched.delta(t),
            pair.coef_noisy(),
            pair.coef_source(),
            pair.coef_eps(),
            pair.post_var,
        )
        .map_err(|e| Error::Config(format!("csv formatting: {e}")))?;
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_step_unit_schedule_has_documented_second_row() {
        let csv = render(4, 1.0).unwrap();
        let row = csv.lines().nth(2).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "2");
        assert_eq!(fields[2], "0.5", "delta at t=2: {row}");
        assert_eq!(fields[5], "0.5", "c_eps at t=2: {row}");
    }

    #[test]
    fn dump_covers_every_step_once() {
        let csv = render(10, 2.0).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0], "t,m,delta,c_x,c_y,c_eps,tilde_delta");
        for (i, line) in lines[1..].iter().enumerate() {
            assert!(line.starts_with(&format!("{},", i + 1)), "{line}");
        }
    }
}
