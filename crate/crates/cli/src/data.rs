//! Synthetic data generation and recording IO shared by the commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use mvpformer::evaluation::SecondLabels;
use mvpformer::rng;
use mvpformer::series::{
    load_csv, load_events, save_csv, save_events, synth_generate, MultiChannelSeries, SynthConfig,
};

use crate::settings::Settings;
use crate::{flag, usage, Common};

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of recordings.
    #[arg(long)]
    pub recordings: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Length of each recording in seconds.
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub sample_rate_hz: Option<f64>,
    /// Relative per-recording frequency jitter.
    #[arg(long)]
    pub freq_jitter: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Anomaly bursts per hour; labelled in the `.events.csv` sidecar.
    #[arg(long)]
    pub bursts_per_hour: Option<f64>,
    #[arg(long)]
    pub burst_duration_s: Option<f64>,
    #[arg(long)]
    pub burst_amplitude: Option<f64>,
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let base = SynthConfig::default();
    let s = Settings::resolve(
        "gen-data",
        true,
        a.common.profile.as_deref(),
        a.common.seed,
        a.common.config.as_deref(),
        vec![
            ("recordings", "4".into()),
            ("channels", base.channels.to_string()),
            ("duration_s", base.duration_s.to_string()),
            ("sample_rate_hz", base.sample_rate_hz.to_string()),
            ("freq_jitter", "0.2".into()),
            ("noise_std", base.noise_std.to_string()),
            ("bursts_per_hour", base.burst_rate_per_hour.to_string()),
            ("burst_duration_s", base.burst_duration_s.to_string()),
            ("burst_amplitude", base.burst_amplitude.to_string()),
        ],
        vec![
            flag("recordings", &a.recordings),
            flag("channels", &a.channels),
            flag("duration_s", &a.duration_s),
            flag("sample_rate_hz", &a.sample_rate_hz),
            flag("freq_jitter", &a.freq_jitter),
            flag("noise_std", &a.noise_std),
            flag("bursts_per_hour", &a.bursts_per_hour),
            flag("burst_duration_s", &a.burst_duration_s),
            flag("burst_amplitude", &a.burst_amplitude),
        ],
    )?;
    let cfg = SynthConfig {
        channels: s.get("channels")?,
        duration_s: s.get("duration_s")?,
        sample_rate_hz: s.get("sample_rate_hz")?,
        freq_jitter: s.get("freq_jitter")?,
        noise_std: s.get("noise_std")?,
        burst_rate_per_hour: s.get("bursts_per_hour")?,
        burst_duration_s: s.get("burst_duration_s")?,
        burst_amplitude: s.get("burst_amplitude")?,
        ..base
    };
    let out = &a.common.out;
    s.write_manifest(out)?;
    let seed = s.seed()?;
    let n: usize = s.get("recordings")?;
    for i in 0..n {
        let series = synth_generate(&cfg, rng::derive(seed, i as u64)).map_err(|e| usage(e.to_string()))?;
        let path = out.join(format!("recording_{i:03}.csv"));
        save_csv(&series, &path)?;
        let events = series.labels().map(|l| SecondLabels::new(l.to_vec())).transpose()?.map(|l| l.runs().0);
        save_events(&events.unwrap_or_default(), sidecar(&path))?;
    }
    println!("wrote {n} recordings to {}", out.display());
    Ok(())
}

/// `<stem>.events.csv` next to a recording.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("events.csv")
}

fn is_recording(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "csv")
        && !p.to_string_lossy().ends_with(".events.csv")
        && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("recording"))
}

/// Recordings at `path` (one CSV or every `recording*.csv` of a
/// directory, sorted), with labels from event sidecars when present.
pub fn load_recordings(path: &str) -> Result<Vec<(PathBuf, MultiChannelSeries)>> {
    let p = Path::new(path);
    if !p.exists() {
        return Err(usage(format!("input {path} does not exist")));
    }
    let files = if p.is_dir() {
        let mut f: Vec<PathBuf> =
            fs::read_dir(p)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_recording(p)).collect();
        f.sort();
        f
    } else {
        vec![p.to_path_buf()]
    };
    if files.is_empty() {
        return Err(usage(format!("no recording*.csv files in {path}")));
    }
    files
        .into_iter()
        .map(|f| {
            let series = load_csv(&f).map_err(|e| usage(e.to_string()))?;
            let side = sidecar(&f);
            let series = if side.exists() {
                let events = load_events(&side).map_err(|e| usage(e.to_string()))?;
                let labels = SecondLabels::from_events(&events, series.whole_seconds());
                series.with_labels(labels.bits().to_vec())?
            } else {
                series
            };
            Ok((f, series))
        })
        .collect()
}

/// `metric,value` report.
pub fn write_metrics(path: &Path, rows: &[(&str, String)]) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "metric,value")?;
    for (k, v) in rows {
        writeln!(f, "{k},{v}")?;
    }
    f.flush()?;
    Ok(())
}

/// Line plot of `y` columns against column 1 of a CSV with a header row.
pub fn write_gnuplot(
    script: &Path,
    csv: &Path,
    title: &str,
    xlabel: &str,
    series: &[(usize, &str)],
    logscale: bool,
) -> Result<()> {
    let csv_name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let png = Path::new(&csv_name).with_extension("png");
    let mut text = format!(
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n\
         set output '{}'\nset title '{title}'\nset xlabel '{xlabel}'\n",
        png.display()
    );
    if logscale {
        text.push_str("set logscale xy\n");
    }
    let plots: Vec<String> = series
        .iter()
        .map(|(col, name)| format!("'{csv_name}' using 1:{col} with linespoints title '{name}'"))
        .collect();
    text.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    fs::write(script, text)?;
    Ok(())
}
