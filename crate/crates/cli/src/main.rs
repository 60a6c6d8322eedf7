use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use disrt::harness::manifest::{
    base_dir, read_json, write_json, FeatureManifest, ResponseLog, TrialManifest,
};
use disrt::harness::stimuli::Stimulus;
use disrt::harness::{eval_builtin, head_sweep, ingest_features, Extractor, TrialsetOptions};
use disrt::image::{load_mask, ImageRgb};
use disrt::topk::{self, parse_topk_config, TopKConfig};
use disrt::{dtf, probe, scenes, synth, FeatureNet, FeatureNetSpec, SynthesisConfig, Tensor};

#[derive(Parser)]
#[command(
    name = "disrt",
    version,
    about = "Global-structure sensitivity benchmark engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render procedural outdoor scenes to use as source images.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a trial set (images plus manifest.json) from a directory of sources.
    Trialset {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_standard: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stimulus width and height in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Use the 10-step synthesis schedule for every trial.
        #[arg(long)]
        fast: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Score a built-in extractor on a trial manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// raw-pixels, featnet-layer:<l> or gram-of-layer:<l>
        #[arg(long)]
        extractor: Extractor,
        /// Top-K config, as a file path or inline JSON.
        #[arg(long)]
        topk: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Per-trial outcomes as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score externally extracted features listed in a feature manifest.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every attention head of a per-head feature manifest.
    HeadSweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score human response logs.
    HumanScore {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a channel-space PCA over activation maps and write projections.
    Probe {
        /// `[C, H, W]` activation maps.
        #[arg(long, required = true, num_args = 1..)]
        acts: Vec<PathBuf>,
        /// Figure masks, one per activation map, nonzero = figure.
        #[arg(long, num_args = 1..)]
        masks: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sparsify a tensor, keeping the largest-magnitude activations.
    Topk {
        /// Top-K config, as a file path or inline JSON.
        #[arg(long)]
        config: String,
        /// Block whose fraction applies; defaults to the config's default.
        #[arg(long)]
        block: Option<usize>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a texture-matched image from a target.
    Synth {
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = synth::DEFAULT_STEPS)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Loss per step as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Render a Gestalt stimulus.
    Stimuli {
        /// kanizsa, continuity-dots, proximity-grid or convexity-pair
        #[arg(long)]
        kind: String,
        /// JSON object overriding default parameters.
        #[arg(long)]
        params: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct NetArgs {
    /// Layer channels, `p` marks a 2×2 average pool after the layer.
    #[arg(long, default_value = "32p,64p,128")]
    net: String,
    #[arg(long, default_value_t = 0)]
    net_seed: u64,
}

impl NetArgs {
    fn build(&self) -> Result<FeatureNet> {
        let mut layers = Vec::new();
        for part in self.net.split(',').map(str::trim) {
            let (digits, pool) = match part.strip_suffix('p') {
                Some(d) => (d, true),
                None => (part, false),
            };
            let channels = digits
                .parse()
                .with_context(|| format!("bad layer {part:?} in --net"))?;
            layers.push((channels, pool));
        }
        Ok(FeatureNet::new(
            FeatureNetSpec::from_pairs(&layers),
            self.net_seed,
        )?)
    }
}

fn json_arg(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.is_file() {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    } else {
        Ok(arg.to_string())
    }
}

fn load_topk(arg: &str) -> Result<TopKConfig> {
    Ok(parse_topk_config(&json_arg(arg)?)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Fixtures {
            out,
            count,
            size,
            seed,
        } => {
            let written = scenes::write_scenes(&out, count, size, seed)?;
            println!("wrote {} scenes to {}", written.len(), out.display());
        }
        Command::Trialset {
            images,
            out,
            n_standard,
            seed,
            size,
            fast,
            steps,
            net,
        } => {
            let mut synthesis = SynthesisConfig::with_seed(seed);
            if let Some(steps) = steps {
                ensure!(!fast, "--steps and --fast are exclusive");
                synthesis.steps = steps;
            }
            let manifest = disrt::harness::build_trialset(&TrialsetOptions {
                image_dir: images,
                out_dir: out.clone(),
                net: net.build()?,
                synthesis,
                n_standard,
                generator_seed: seed,
                resolution: [size, size],
                fast,
            })?;
            println!(
                "{}: {} standard + {} catch trials, {} skipped, in {}",
                manifest.session_id,
                manifest.n_standard(),
                manifest.n_catch(),
                manifest.skipped.len(),
                out.display()
            );
        }
        Command::Eval {
            manifest,
            extractor,
            topk,
            out,
            csv,
        } => {
            let tm: TrialManifest = read_json(&manifest)?;
            let topk = topk.as_deref().map(load_topk).transpose()?;
            let report = eval_builtin(&tm, &base_dir(&manifest), extractor, topk.as_ref())?;
            write_json(&report, &out)?;
            if let Some(csv) = csv {
                write_text(&csv, &report.to_csv())?;
            }
            println!(
                "{extractor}: {:.1} ({} of {} valid trials, 95% CI {:.1}-{:.1})",
                report.score, report.n_correct, report.n_valid, report.ci95[0], report.ci95[1]
            );
        }
        Command::Ingest {
            manifest,
            features,
            out,
        } => {
            let tm: TrialManifest = read_json(&manifest)?;
            let fm: FeatureManifest = read_json(&features)?;
            let ingested = ingest_features(&tm, &fm, &base_dir(&features));
            create_dir(&out)?;
            let mut reports = Vec::new();
            for (key, trials) in &ingested.groups {
                match disrt::oddity::score_group(key.clone(), trials) {
                    Ok(r) => {
                        println!("{key}: {:.1} over {} valid trials", r.score, r.n_valid);
                        reports.push(r);
                    }
                    Err(e) => println!("{key}: {e}"),
                }
            }
            write_json(&reports, out.join("reports.json"))?;
            write_json(&ingested.errors, out.join("errors.json"))?;
            println!(
                "{} trials ingested, {} errors",
                ingested.n_trials(),
                ingested.errors.len()
            );
        }
        Command::HeadSweep {
            manifest,
            features,
            out,
        } => {
            let tm: TrialManifest = read_json(&manifest)?;
            let fm: FeatureManifest = read_json(&features)?;
            let ingested = ingest_features(&tm, &fm, &base_dir(&features));
            if !ingested.errors.is_empty() {
                eprintln!("{} feature entries failed to load", ingested.errors.len());
            }
            let sweep = head_sweep(&ingested.groups)?;
            create_dir(&out)?;
            write_text(&out.join("heads.csv"), &sweep.to_csv())?;
            write_text(&out.join("boundaries.json"), &sweep.sidecar_json())?;
            write_json(&sweep.reports, out.join("reports.json"))?;
            write_json(&ingested.errors, out.join("errors.json"))?;
            println!(
                "{} heads scored, layer boundaries at {:?}",
                sweep.rows.len(),
                sweep.boundaries
            );
        }
        Command::HumanScore {
            manifest,
            logs,
            out,
        } => {
            let tm: TrialManifest = read_json(&manifest)?;
            let logs = logs
                .iter()
                .map(read_json::<ResponseLog>)
                .collect::<disrt::Result<Vec<_>>>()?;
            let score = disrt::oddity::score_human_log(&tm, &logs)?;
            write_json(&score, &out)?;
            for r in &score.subjects {
                println!(
                    "{}: {:.1} ({} valid, {} invalid)",
                    r.group, r.score, r.n_valid, r.n_invalid
                );
            }
            println!(
                "pooled over {} subjects: {:.1}",
                score.n_subjects, score.pooled_score
            );
        }
        Command::Probe {
            acts,
            masks,
            k,
            out,
        } => run_probe(&acts, &masks, k, &out)?,
        Command::Topk {
            config,
            block,
            input,
            out,
        } => {
            let cfg = load_topk(&config)?;
            let keep = match block {
                Some(b) => cfg.fraction_for(b),
                None => cfg.default_fraction.or_else(|| match cfg.blocks()[..] {
                    [(_, f)] => Some(f),
                    _ => None,
                }),
            };
            let Some(keep) = keep else {
                bail!("config gives no fraction for this tensor; pass --block or add a \"default\" entry");
            };
            let t = dtf::read(&input)?;
            dtf::write(&topk::apply(&t, keep)?, &out)?;
            println!(
                "kept {} of every plane at fraction {keep}",
                topk::keep_count(plane_len(&t), keep)
            );
        }
        Command::Synth {
            target,
            seed,
            steps,
            out,
            trace,
            net,
        } => {
            let net = net.build()?;
            let img = ImageRgb::load(&target)?;
            let cfg = SynthesisConfig {
                steps,
                ..SynthesisConfig::with_seed(seed)
            };
            let result = synth::synthesize(&net, &img, &cfg)?;
            result.image.save(&out)?;
            if let Some(trace) = trace {
                let mut trace_with_final = result.loss_trace.clone();
                trace_with_final.push(result.final_loss);
                write_text(&trace, &synth::trace_csv(&trace_with_final))?;
            }
            println!(
                "loss {:e} -> {:e} after {steps} steps",
                result
                    .loss_trace
                    .first()
                    .copied()
                    .unwrap_or(result.final_loss),
                result.final_loss
            );
        }
        Command::Stimuli { kind, params, out } => {
            let stimulus = match params {
                Some(p) => {
                    let mut value: serde_json::Value = serde_json::from_str(&json_arg(&p)?)?;
                    let obj = value
                        .as_object_mut()
                        .context("--params must be a JSON object")?;
                    obj.insert("kind".into(), kind.into());
                    serde_json::from_value::<Stimulus>(value)
                        .context("invalid stimulus parameters")?
                }
                None => Stimulus::default_for(&kind)?,
            };
            stimulus.render()?.save(&out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn plane_len(t: &Tensor) -> usize {
    // Tokens `[N, D]` are ranked per feature over N; maps per `H × W` plane.
    match t.shape() {
        [n, _] => *n,
        s => s[s.len().saturating_sub(2)..].iter().product(),
    }
}

fn run_probe(acts: &[PathBuf], masks: &[PathBuf], k: usize, out: &Path) -> Result<()> {
    ensure!(
        masks.is_empty() || masks.len() == acts.len(),
        "{} masks for {} activation maps",
        masks.len(),
        acts.len()
    );
    let tensors = acts
        .iter()
        .map(dtf::read)
        .collect::<disrt::Result<Vec<Tensor>>>()?;
    let samples = probe::samples_from_activations(&tensors)?;
    let basis = probe::fit_pca(&samples, k)?;

    let mut figure = Vec::new();
    for (path, t) in masks.iter().zip(&tensors) {
        let (_, h, w) = t.chw()?;
        let (mw, mh, m) = load_mask(path)?;
        let m = if (mw, mh) == (w, h) {
            m
        } else {
            // Masks drawn at image resolution are resampled to the map grid.
            let img = ImageRgb::load(path)?.resize_bilinear(w, h)?;
            (0..w * h)
                .map(|i| (0..3).any(|c| img.channel(c)[i] >= 0.5))
                .collect()
        };
        figure.extend(m);
    }
    let basis = if masks.is_empty() {
        probe::orient_with_border(basis, &tensors)?
    } else {
        probe::orient_with_labels(basis, &samples, &figure)?
    };

    create_dir(out)?;
    basis.save(out.join("basis"))?;
    let mut pc1 = Vec::new();
    for (i, t) in tensors.iter().enumerate() {
        let proj = probe::project(&basis, t)?;
        let (_, h, w) = proj.chw()?;
        pc1.extend(proj.data()[..h * w].iter().map(|&v| f64::from(v)));
        dtf::write(&proj, out.join(format!("proj_{i:04}.dtf")))?;
        if basis.k() >= 3 {
            probe::rgb_map(&basis, t)?.save(out.join(format!("rgb_{i:04}.png")))?;
        }
    }
    if !masks.is_empty() {
        let report = probe::figure_ground_auc(&pc1, &figure)?;
        write_json(&report, out.join("separability.json"))?;
        write_text(&out.join("histogram.csv"), &report.histogram_csv())?;
        println!("figure/ground AUC {:.4}", report.auc);
    }
    println!(
        "fitted {} components over {} positions, eigenvalues {:?}",
        basis.k(),
        basis.n_samples,
        basis.eigenvalues
    );
    Ok(())
}
