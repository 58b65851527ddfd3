//! `train`: fit the bridge noise predictor with Adam, optional shadow
//! weights, and plateau-driven learning-rate decay.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use cpdm_core::bridge::{training_loss, GuidancePair, TrainItem};
use cpdm_core::denoiser::optim::{Adam, Ema, PlateauConfig, PlateauScheduler};
use cpdm_core::denoiser::{save_checkpoint, CheckpointMeta, Denoiser, NetSpec};
use cpdm_core::schedule::BridgeSchedule;
use cpdm_core::{Error, Prng, Result, Tensor};

use crate::commands::{guidance_for, load_guidance, load_split_pairs, SplitSel};
use crate::config::{self, RunConfig};

/// Batches fed to the plateau scheduler as one averaged loss reading.
const PLATEAU_WINDOW: usize = 100;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (from gen-data)
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Guidance maps directory (from make-maps)
    #[arg(long, value_name = "DIR")]
    pub maps: PathBuf,
    /// Checkpoint output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

struct Example {
    x0: Tensor,
    y: Tensor,
    guidance: GuidancePair,
}

pub fn run(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let pairs = load_split_pairs(&args.data, SplitSel::Train)?;
    let maps = load_guidance(&args.maps)?;
    let examples: Vec<Example> = pairs
        .into_iter()
        .map(|p| {
            Ok(Example {
                guidance: guidance_for(&maps, &p.id)?.clone(),
                x0: p.pet,
                y: p.ct,
            })
        })
        .collect::<Result<_>>()?;

    let sched = BridgeSchedule::new(cfg.t_total, cfg.s_var)?;
    let mut init_stream = Prng::new(cfg.seed, "init");
    let mut net = Denoiser::init(NetSpec::noise_predictor(cfg.t_total), &mut init_stream)?;
    let mut adam = Adam::new(net.params().len());
    let mut ema = if cfg.ema.on {
        Some(Ema::new(cfg.ema.decay, cfg.ema.start)?)
    } else {
        None
    };
    let mut plateau = PlateauScheduler::new(cfg.lr, PlateauConfig::default())?;
    let mut batch_stream = Prng::new(cfg.seed, "batches");
    let mut noise_stream = Prng::new(cfg.seed, "noise");

    let mut history = String::from("step,loss,lr\n");
    let mut window: Vec<f64> = Vec::with_capacity(PLATEAU_WINDOW);
    for step in 1..=cfg.train_steps as u64 {
        let batch: Vec<TrainItem> = (0..cfg.batch)
            .map(|_| {
                let i = batch_stream.below(examples.len() as u64) as usize;
                TrainItem {
                    x0: &examples[i].x0,
                    y: &examples[i].y,
                    guidance: &examples[i].guidance,
                }
            })
            .collect();
        let report = training_loss(
            &sched,
            &net,
            &batch,
            cfg.loss_kind(),
            cfg.loss_weighting(),
            &mut noise_stream,
        )?;
        adam.step(net.params_mut(), &report.grads, plateau.lr())?;
        if let Some(e) = &mut ema {
            e.observe(step, net.params());
        }

        writeln!(history, "{step},{},{}", report.loss, plateau.lr())
            .map_err(|e| Error::Config(format!("history formatting: {e}")))?;
        window.push(report.loss);
        if window.len() == PLATEAU_WINDOW {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            plateau.observe(mean);
            window.clear();
        }
        if step % 500 == 0 || step == cfg.train_steps as u64 {
            eprintln!(
                "step {step}/{} loss {:.6} lr {:.2e}",
                cfg.train_steps,
                report.loss,
                plateau.lr()
            );
        }
    }

    let shadow = ema.as_ref().and_then(|e| e.shadow());
    save_checkpoint(
        &args.out,
        "model",
        &net,
        shadow,
        &CheckpointMeta {
            step_count: cfg.train_steps as u64,
            lr: plateau.lr(),
            ema: shadow.is_some(),
        },
    )?;
    let history_path = args.out.join("loss_history.csv");
    std::fs::write(&history_path, history).map_err(Error::io(history_path))?;
    config::write_resolved(&args.out, cfg)?;

    println!(
        "trained {} steps on {} pairs; checkpoint in {}",
        cfg.train_steps,
        examples.len(),
        args.out.display()
    );
    Ok(())
}
