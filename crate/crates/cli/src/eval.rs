//! `eval`: agreement and event metrics.
//!
//! Either compares a predicted event file with a reference one, or runs a
//! fine-tuned checkpoint over labelled recordings one second at a time and
//! scores the events raised by the online detector.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Result;
use clap::Args;
use mvpformer::evaluation::{
    cohen_kappa, detection_metrics, episodic_postprocess, kappa_estimate, landis_koch, online_threshold, Event,
    SecondLabels,
};
use mvpformer::series::load_events;
use mvpformer::trainer::predict_classes;

use crate::data::{load_recordings, write_gnuplot, write_metrics};
use crate::settings::Settings;
use crate::train::{load_model, windows_of};
use crate::{flag, usage, Common};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Predicted events (`start_s,end_s` rows).
    #[arg(long)]
    pub pred: Option<String>,
    /// Reference events.
    #[arg(long)]
    pub truth: Option<String>,
    /// Recording length for event files; defaults to the last event end.
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Fine-tuned checkpoint, scored on `--data` instead of event files.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Labelled recordings for `--checkpoint`.
    #[arg(long)]
    pub data: Option<String>,
    /// Merge, length and support filtering of predicted events.
    #[arg(long)]
    pub postprocess: bool,
}

fn read_events(path: &str) -> Result<Vec<Event>> {
    if !Path::new(path).exists() {
        return Err(usage(format!("event file {path} does not exist")));
    }
    load_events(path).map_err(|e| usage(e.to_string()))
}

/// Positive seconds of `bits` inside each event.
fn support(events: &[Event], bits: &[u8]) -> Vec<usize> {
    events
        .iter()
        .map(|e| {
            let lo = (e.start_s.max(0.0).floor() as usize).min(bits.len());
            let hi = (e.end_s.ceil().max(0.0) as usize).min(bits.len());
            bits[lo..hi].iter().filter(|&&b| b == 1).count()
        })
        .collect()
}

/// Per-second predictions, events and reference labels of one recording.
struct Scored {
    pred_bits: Vec<u8>,
    pred_events: Vec<Event>,
    truth_bits: Vec<u8>,
    truth_events: Vec<Event>,
}

fn finish(pred_bits: Vec<u8>, raw: Vec<Event>, truth_bits: Vec<u8>, postprocess: bool) -> Result<Scored> {
    let pred_events = if postprocess {
        let counts = support(&raw, &pred_bits);
        episodic_postprocess(&raw, &counts)?.0
    } else {
        raw
    };
    let truth_events = SecondLabels::new(truth_bits.clone())?.runs().0;
    Ok(Scored { pred_bits, pred_events, truth_bits, truth_events })
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let s = Settings::resolve(
        "eval",
        false,
        a.common.profile.as_deref(),
        a.common.seed,
        a.common.config.as_deref(),
        vec![
            ("pred", String::new()),
            ("truth", String::new()),
            ("duration_s", String::new()),
            ("checkpoint", String::new()),
            ("data", String::new()),
            ("postprocess", "false".into()),
            ("window_s", "10".into()),
            ("segment_s", "1".into()),
            ("kappa_segments", "300".into()),
            ("kappa_iterations", "250".into()),
        ],
        vec![
            flag("pred", &a.pred),
            flag("truth", &a.truth),
            flag("duration_s", &a.duration_s),
            flag("checkpoint", &a.checkpoint),
            flag("data", &a.data),
            ("postprocess", a.postprocess.then(|| "true".to_string())),
        ],
    )?;
    let postprocess: bool = s.get("postprocess")?;
    let scored: Vec<Scored> = match (s.opt("pred"), s.opt("truth"), s.opt("checkpoint"), s.opt("data")) {
        (Some(p), Some(t), None, None) => {
            let pred = read_events(p)?;
            let truth = read_events(t)?;
            let seconds = match s.opt("duration_s") {
                Some(_) => s.get::<f64>("duration_s")?.ceil() as usize,
                None => pred.iter().chain(&truth).map(|e| e.end_s.ceil() as usize).max().unwrap_or(0),
            };
            if seconds == 0 {
                return Err(usage("no events and no --duration-s; nothing to score"));
            }
            let pred_bits = SecondLabels::from_events(&pred, seconds).bits().to_vec();
            let truth_bits = SecondLabels::from_events(&truth, seconds).bits().to_vec();
            vec![finish(pred_bits, pred, truth_bits, postprocess)?]
        }
        (None, None, Some(ckpt), Some(data)) => {
            let model = load_model(ckpt)?;
            if model.classifier().is_none() {
                return Err(usage(format!("checkpoint {ckpt} has no classifier; run finetune first")));
            }
            let (window_s, segment_s): (f64, f64) = (s.get("window_s")?, s.get("segment_s")?);
            let mut out = Vec::new();
            for (path, r) in load_recordings(data)? {
                let truth = r.labels().ok_or_else(|| usage(format!("{} has no event sidecar", path.display())))?;
                let windows = windows_of(&r, model.config().segment_samples, window_s, segment_s, 1.0)?;
                let classes = predict_classes(&model, &windows)?;
                // Each window answers for its last second; earlier seconds stay negative.
                let mut bits = vec![0u8; truth.len()];
                for (w, k) in windows.iter().zip(&classes) {
                    let last = (w.start_seconds + w.window_seconds()).round() as usize;
                    if last >= 1 && last <= bits.len() {
                        bits[last - 1] = u8::from(*k == 1);
                    }
                }
                let raw = online_threshold(&SecondLabels::new(bits.clone())?);
                out.push(finish(bits, raw, truth.to_vec(), postprocess)?);
            }
            out
        }
        _ => return Err(usage("pass either --pred and --truth, or --checkpoint and --data")),
    };

    // Recordings are laid end to end so one set of metrics covers them all.
    let (mut pred_bits, mut truth_bits, mut pred_events, mut truth_events) = (vec![], vec![], vec![], vec![]);
    for r in scored {
        let offset = pred_bits.len() as f64;
        let shift = |e: &Event| Event::new(e.start_s + offset, e.end_s + offset);
        pred_events.extend(r.pred_events.iter().map(shift));
        truth_events.extend(r.truth_events.iter().map(shift));
        pred_bits.extend(r.pred_bits);
        truth_bits.extend(r.truth_bits);
    }
    let hours = pred_bits.len() as f64 / 3600.0;
    let kappa = cohen_kappa(&pred_bits, &truth_bits)?;
    let estimate = kappa_estimate(
        &SecondLabels::new(pred_bits)?,
        &SecondLabels::new(truth_bits)?,
        s.get("kappa_segments")?,
        s.get("kappa_iterations")?,
        s.seed()?,
    )?;
    let d = detection_metrics(&pred_events, &truth_events, hours)?;

    let out = &a.common.out;
    s.write_manifest(out)?;
    write_metrics(
        &out.join("eval.csv"),
        &[
            ("kappa", kappa.to_string()),
            ("kappa_estimate", estimate.mean.to_string()),
            ("agreement", landis_koch(estimate.mean).to_string()),
            ("f1", d.f1.to_string()),
            ("sensitivity", d.sensitivity.to_string()),
            ("precision", d.precision.to_string()),
            ("fp_per_hour", d.fp_per_hour.to_string()),
            ("true_positives", d.true_positives.to_string()),
            ("false_positives", d.false_positives.to_string()),
            ("predicted_events", pred_events.len().to_string()),
            ("reference_events", truth_events.len().to_string()),
        ],
    )?;
    let running = out.join("kappa_running.csv");
    let mut f = std::io::BufWriter::new(fs::File::create(&running)?);
    writeln!(f, "iteration,kappa,running_mean,running_delta")?;
    for (i, ((k, m), dlt)) in
        estimate.samples.iter().zip(&estimate.running_mean).zip(&estimate.running_delta).enumerate()
    {
        writeln!(f, "{},{k},{m},{dlt}", i + 1)?;
    }
    f.flush()?;
    if a.common.emit_gnuplot {
        write_gnuplot(
            &out.join("kappa_running.gp"),
            &running,
            "kappa estimate",
            "iteration",
            &[(3, "running mean")],
            false,
        )?;
    }
    println!(
        "kappa {kappa:.4} (estimate {:.4}, {}), F1 {:.4}, FP/h {:.3}",
        estimate.mean,
        landis_koch(estimate.mean),
        d.f1,
        d.fp_per_hour
    );
    Ok(())
}
