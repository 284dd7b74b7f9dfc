//! `verify` and `bench-attn`.

use std::fs;
use std::io::Write;
use std::time::Instant;

use anyhow::Result;
use clap::Args;
use mvpformer::attention::{
    corrupt_shift_time, efficient_mvpa_logits, naive_mvpa_logits, AttentionConfig, MvpaParams, OpCounters,
};
use mvpformer::rng;
use mvpformer::tensor::EmbeddingGrid;
use mvpformer::verify::{run_battery, write_report_csv, BatteryConfig};

use crate::data::write_gnuplot;
use crate::settings::Settings;
use crate::{flag, usage, CheckFailed, Common};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Smaller randomized budgets (seconds instead of a minute).
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub oracle_instances: Option<usize>,
    #[arg(long)]
    pub causality_trials: Option<usize>,
    /// Deliberately break a component to confirm the battery notices.
    #[arg(long, hide = true, value_parser = ["shift_time"])]
    pub corrupt: Option<String>,
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    let full = BatteryConfig::default();
    let budget = if a.quick {
        BatteryConfig {
            oracle_instances: 3,
            causality_trials: 100,
            dropout_draws: 2000,
            postprocess_lists: 200,
            gradient_probes: 2,
            ..full
        }
    } else {
        full
    };
    let s = Settings::resolve(
        "verify",
        true,
        a.common.profile.as_deref(),
        a.common.seed,
        a.common.config.as_deref(),
        vec![
            ("oracle_instances", budget.oracle_instances.to_string()),
            ("causality_trials", budget.causality_trials.to_string()),
            ("dropout_draws", budget.dropout_draws.to_string()),
            ("postprocess_lists", budget.postprocess_lists.to_string()),
            ("gradient_probes", budget.gradient_probes.to_string()),
        ],
        vec![flag("oracle_instances", &a.oracle_instances), flag("causality_trials", &a.causality_trials)],
    )?;
    let cfg = BatteryConfig {
        seed: s.seed()?,
        oracle_instances: s.get("oracle_instances")?,
        causality_trials: s.get("causality_trials")?,
        dropout_draws: s.get("dropout_draws")?,
        postprocess_lists: s.get("postprocess_lists")?,
        gradient_probes: s.get("gradient_probes")?,
    };
    let out = &a.common.out;
    s.write_manifest(out)?;
    if a.corrupt.is_some() {
        log::warn!("shift_time is deliberately corrupted for this run");
        corrupt_shift_time(true);
    }
    let results = run_battery(&cfg);
    corrupt_shift_time(false);
    write_report_csv(&results, out.join("verify.csv"))?;
    for r in &results {
        println!("{} {:<28} {:>7.2}s  {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(())
    } else {
        Err(CheckFailed(format!("failed checks: {}", failed.join(", "))).into())
    }
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated time-step counts.
    #[arg(long)]
    pub times: Option<String>,
    /// Comma-separated channel counts.
    #[arg(long)]
    pub channels: Option<String>,
    /// Timed repetitions per row; the fastest is reported.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Rows needing more than this many `H·N²` logits only report counters.
    #[arg(long)]
    pub max_logits: Option<usize>,
}

fn best_ns(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<u128> {
    let mut best = u128::MAX;
    for _ in 0..reps.max(1) {
        let t0 = Instant::now();
        f()?;
        best = best.min(t0.elapsed().as_nanos());
    }
    Ok(best)
}

/// Closed-form tallies `(content, time, channel)`.
pub fn expected_counters(heads: u64, times: u64, channels: u64, window: u64) -> OpCounters {
    OpCounters {
        content_dots: heads * channels * channels * (0..times).map(|t| (t + 1).min(window)).sum::<u64>(),
        time_dots: heads * channels * times * times,
        channel_dots: heads * times * channels * (2 * channels - 1),
    }
}

pub fn bench_attn(a: BenchArgs) -> Result<()> {
    let s = Settings::resolve(
        "bench-attn",
        true,
        a.common.profile.as_deref(),
        a.common.seed,
        a.common.config.as_deref(),
        vec![
            ("times", "1,2,4,8,16,32".into()),
            ("channels", "1,2,4,8,16,32".into()),
            ("reps", "3".into()),
            ("max_logits", "8000000".into()),
        ],
        vec![
            flag("times", &a.times),
            flag("channels", &a.channels),
            flag("reps", &a.reps),
            flag("max_logits", &a.max_logits),
        ],
    )?;
    let times: Vec<usize> = s.list("times")?;
    let channels: Vec<usize> = s.list("channels")?;
    if times.is_empty() || channels.is_empty() || times.contains(&0) || channels.contains(&0) {
        return Err(usage("--times and --channels need positive entries"));
    }
    let (reps, max_logits): (usize, usize) = (s.get("reps")?, s.get("max_logits")?);
    let model = s.model()?;
    let mut dims = model.attention_dims();
    dims.max_times = dims.max_times.max(*times.iter().max().expect("non-empty"));
    dims.max_channels = dims.max_channels.max(*channels.iter().max().expect("non-empty"));
    let mut r = rng::seeded(s.seed()?);
    let params = MvpaParams::init(dims, model.init_std, &mut r)?;
    let cfg = AttentionConfig::new(dims.embed_dim, model.local_window);
    let out = &a.common.out;
    s.write_manifest(out)?;

    let path = out.join("bench.csv");
    let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
    writeln!(f, "T,C,naive_ns,efficient_ns,content_dots,time_dots,channel_dots")?;
    let mut mismatches = Vec::new();
    for &t in &times {
        for &c in &channels {
            let want = expected_counters(dims.n_heads as u64, t as u64, c as u64, model.local_window as u64);
            let logits = dims.n_heads * (t * c).pow(2);
            let (naive, fast, n) = if logits > max_logits {
                log::info!("T={t} C={c}: {logits} logits over the guard, counters only");
                (String::new(), String::new(), want)
            } else {
                let e = EmbeddingGrid::random(c, t, dims.embed_dim, 1.0, &mut r);
                let naive = best_ns(reps, || Ok(naive_mvpa_logits(&e, &params, &cfg).map(|_| ())?))?;
                let mut n = OpCounters::default();
                let fast = best_ns(reps, || {
                    n = OpCounters::default();
                    Ok(efficient_mvpa_logits(&e, &params, &cfg, &mut n).map(|_| ())?)
                })?;
                if n != want {
                    mismatches.push(format!("T={t} C={c}: {n:?} vs {want:?}"));
                }
                (naive.to_string(), fast.to_string(), n)
            };
            writeln!(f, "{t},{c},{naive},{fast},{},{},{}", n.content_dots, n.time_dots, n.channel_dots)?;
        }
    }
    f.flush()?;
    if a.common.emit_gnuplot {
        write_gnuplot(
            &out.join("bench.gp"),
            &path,
            "MVPA logits: naive vs efficient",
            "T (rows grouped by C)",
            &[(3, "naive_ns"), (4, "efficient_ns")],
            false,
        )?;
    }
    println!("wrote {}", path.display());
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(format!("counter formulas violated: {}", mismatches.join("; "))).into())
    }
}
