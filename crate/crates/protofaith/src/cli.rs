//! `protofaith` subcommands.
//!
//! Every command is deterministic in its inputs and `--seed`. Exit codes are
//! 0 on success, 1 when a computation or file fails and 2 for usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use protofaith_core::desk::{projected_model, random_images, DeskConfig};
use protofaith_core::evaluation::{
    counterexample_fixture, validate_moments, AopcReport, MomentKind, COUNTEREXAMPLE_ACTIVATION,
};
use protofaith_core::explain::{explain, ExplainOptions};
use protofaith_core::legacy::{legacy_as_attribution, legacy_map};
use protofaith_core::protopnet::{self, LabeledImage};
use protofaith_core::shapley::{
    exact_shapley, CoalitionModel, Granularity, Method, SetFunctionSpec, Target,
};
use protofaith_core::ModelSpec;

use crate::error::{Error, Result};
use crate::io::{self, tables};

#[derive(Debug, Parser)]
#[command(
    name = "protofaith",
    version,
    about = "Prototype networks with faithful Shapley explanations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Faith,
    Legacy,
    Oracle,
    Sampler,
}

impl MethodArg {
    fn method(self) -> Method {
        match self {
            MethodArg::Faith => Method::Dasp,
            MethodArg::Legacy => Method::Legacy,
            MethodArg::Oracle => Method::Oracle,
            MethodArg::Sampler => Method::Sampler,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Paper,
    PerTerm,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoalitionArg {
    Bernoulli,
    ExactSize,
}

impl From<CoalitionArg> for CoalitionModel {
    fn from(c: CoalitionArg) -> Self {
        match c {
            CoalitionArg::Bernoulli => CoalitionModel::Bernoulli,
            CoalitionArg::ExactSize => CoalitionModel::ExactSize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Relu,
    Relu1,
    Quadratic,
    Minpool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConfigArg {
    Reference,
    Random,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Logits, probabilities, distances and contribution scores of one image.
    Forward {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class whose contribution scores are listed; defaults to the predicted class.
        #[arg(long)]
        class: Option<usize>,
        /// Directory for `forward.csv`; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-prototype attribution maps as PGM heatmaps and CSV tables.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Restrict to the prototypes of this class.
        #[arg(long)]
        class: Option<usize>,
        /// Prototype index within `--class`, or `all`.
        #[arg(long, default_value = "all")]
        proto: String,
        #[arg(long, value_enum, default_value = "faith")]
        method: MethodArg,
        /// Coalition sizes for faith, permutations for sampler.
        #[arg(long)]
        budget: Option<usize>,
        /// Required by the sampler.
        #[arg(long)]
        seed: Option<u64>,
        /// Training set holding the source images named by prototype provenance.
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "bernoulli")]
        coalition: CoalitionArg,
        /// Grey depth of the heatmaps (255 or 65535).
        #[arg(long, default_value_t = 255)]
        maxval: u16,
        #[arg(long)]
        out: PathBuf,
    },
    /// AOPC of faithful against legacy orderings on every prototype's source image.
    Aopc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        training: PathBuf,
        /// DASP coalition sizes.
        #[arg(long)]
        budget: Option<usize>,
        /// Removal steps; defaults to 10% of the features, rounded up.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value = "both")]
        norm: NormArg,
        #[arg(long, value_enum, default_value = "bernoulli")]
        coalition: CoalitionArg,
        /// Directory for `aopc.csv` and `curves.csv`; only the scores go to standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check of a closed-form moment on its reference grid.
    Validate {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Builds the receptive-field counterexample and compares legacy and exact attributions.
    Counterexample {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a random calibrated model with projected prototypes, its training set and a test image.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "reference")]
        config: ConfigArg,
        /// Input extent `H,W,C` replacing the configuration's.
        #[arg(long, value_parser = parse_extent)]
        input: Option<[usize; 3]>,
        #[arg(long, default_value_t = 3)]
        images_per_class: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_extent(text: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = text.split(',').collect();
    let dims: Vec<usize> = parts
        .iter()
        .filter_map(|p| p.trim().parse().ok())
        .filter(|&d| d > 0)
        .collect();
    match dims.as_slice() {
        &[h, w, c] if parts.len() == 3 => Ok([h, w, c]),
        _ => Err(format!(
            "expected three positive extents H,W,C, got '{text}'"
        )),
    }
}

/// Parses `args` and runs the command, returning the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Forward {
            model,
            image,
            class,
            out,
        } => cmd_forward(&model, &image, class, out.as_deref(), stdout),
        Command::Explain {
            model,
            image,
            class,
            proto,
            method,
            budget,
            seed,
            training,
            coalition,
            maxval,
            out,
        } => {
            if method == MethodArg::Sampler && seed.is_none() {
                return Err(Error::Usage(
                    "--seed is required with --method sampler".into(),
                ));
            }
            if budget == Some(0) {
                return Err(Error::Usage("--budget must be at least 1".into()));
            }
            if !io::pgm::MAXVALS.contains(&maxval) {
                return Err(Error::Usage("--maxval must be 255 or 65535".into()));
            }
            let options = ExplainOptions {
                budget,
                seed,
                coalition: coalition.into(),
                ..ExplainOptions::default()
            };
            let request = ExplainRequest {
                class,
                proto,
                method: method.method(),
                options,
                maxval,
            };
            cmd_explain(&model, &image, training.as_deref(), &request, &out, stdout)
        }
        Command::Aopc {
            model,
            training,
            budget,
            steps,
            norm,
            coalition,
            out,
        } => {
            if budget == Some(0) {
                return Err(Error::Usage("--budget must be at least 1".into()));
            }
            let options = ExplainOptions {
                budget,
                coalition: coalition.into(),
                ..ExplainOptions::default()
            };
            cmd_aopc(
                &model,
                &training,
                &options,
                steps,
                norm,
                out.as_deref(),
                stdout,
            )
        }
        Command::Validate {
            kind,
            seed,
            samples,
            out,
        } => cmd_validate(kind, seed, samples, out.as_deref(), stdout),
        Command::Counterexample { out } => cmd_counterexample(out.as_deref(), stdout),
        Command::Generate {
            seed,
            config,
            input,
            images_per_class,
            out,
        } => cmd_generate(seed, config, input, images_per_class, &out, stdout),
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, name: &str, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(dir) => {
            out_dir(dir)?;
            write_file(&dir.join(name), text.as_bytes())
        }
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn load_image_for(model: &ModelSpec, path: &Path) -> Result<protofaith_core::Tensor> {
    let image = io::load_image(path)?;
    if image.shape() != model.input_shape() {
        return Err(Error::format(
            path,
            format!(
                "image shape {:?} does not match model input {:?}",
                image.shape(),
                model.input_shape()
            ),
        ));
    }
    Ok(image)
}

fn cmd_forward(
    model: &Path,
    image: &Path,
    class: Option<usize>,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let model = io::load_model(model)?;
    let image = load_image_for(&model, image)?;
    if let Some(c) = class {
        if c >= model.classes() {
            return Err(Error::Usage(format!(
                "--class {c} out of range: the model has {} classes",
                model.classes()
            )));
        }
    }
    let result = protopnet::forward(&model, &image)?;
    let class = class.unwrap_or_else(|| {
        result
            .logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                if v > best.1 {
                    (c, v)
                } else {
                    best
                }
            })
            .0
    });
    let scores = protopnet::contribution_scores(&model, &result.distances, class)?;
    let text = tables::forward_csv(&result, &scores, model.prototypes().per_class());
    emit(out, "forward.csv", &text, stdout)
}

/// Flat prototype indices named by `--class` and `--proto`.
pub fn select_prototypes(
    model: &ModelSpec,
    class: Option<usize>,
    proto: &str,
) -> Result<Vec<usize>> {
    let protos = model.prototypes();
    let (k, c) = (protos.per_class(), protos.classes());
    if let Some(class) = class {
        if class >= c {
            return Err(Error::Usage(format!(
                "--class {class} out of range: the model has {c} classes"
            )));
        }
    }
    if proto == "all" {
        return Ok(match class {
            Some(class) => (0..k).map(|i| protos.index(class, i)).collect(),
            None => (0..protos.len()).collect(),
        });
    }
    let index: usize = proto.parse().map_err(|_| {
        Error::Usage(format!(
            "--proto must be a prototype index or 'all', got '{proto}'"
        ))
    })?;
    let class = class.ok_or_else(|| Error::Usage("--proto with an index needs --class".into()))?;
    if index >= k {
        return Err(Error::Usage(format!(
            "--proto {index} out of range: each class has {k} prototypes"
        )));
    }
    Ok(vec![protos.index(class, index)])
}

struct ExplainRequest {
    class: Option<usize>,
    proto: String,
    method: Method,
    options: ExplainOptions,
    maxval: u16,
}

fn cmd_explain(
    model: &Path,
    image: &Path,
    training: Option<&Path>,
    request: &ExplainRequest,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    let model = io::load_model(model)?;
    let test = load_image_for(&model, image)?;
    let training = training.map(io::load_dataset).transpose()?;
    let selected = select_prototypes(&model, request.class, &request.proto)?;
    out_dir(out)?;
    let k = model.prototypes().per_class();
    let mut rows = vec![
        "image,prototype_class,prototype_index,method,residual,heatmap,attribution".to_string(),
    ];
    for &p in &selected {
        let mut jobs: Vec<(&str, &protofaith_core::Tensor)> = vec![("test", &test)];
        if let (Some(set), Some(prov)) = (&training, model.prototypes().provenance(p)) {
            let source = set.get(prov.image).ok_or_else(|| {
                Error::Usage(format!(
                    "prototype {p} comes from training image {} but the training set has {} images",
                    prov.image,
                    set.len()
                ))
            })?;
            jobs.push(("source", &source.image));
        }
        for (label, img) in jobs {
            let map = explain(
                &model,
                img,
                Target::Distance(p),
                request.method,
                &request.options,
            )?;
            let stem = format!("{label}_c{}_k{}", p / k, p % k);
            write_file(
                &out.join(format!("{stem}.pgm")),
                &io::pgm::heatmap_bytes(&map, request.maxval)?,
            )?;
            write_file(
                &out.join(format!("{stem}.csv")),
                tables::attribution_csv(&map).as_bytes(),
            )?;
            rows.push(format!(
                "{label},{},{},{},{},{stem}.pgm,{stem}.csv",
                p / k,
                p % k,
                map.method.name(),
                tables::num(map.residual)
            ));
        }
    }
    let summary = rows.join("\n") + "\n";
    write_file(&out.join("maps.csv"), summary.as_bytes())?;
    writeln!(stdout, "wrote {} maps to {}", rows.len() - 1, out.display())
        .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_aopc(
    model: &Path,
    training: &Path,
    options: &ExplainOptions,
    steps: Option<usize>,
    norm: NormArg,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let model = io::load_model(model)?;
    let training = io::load_dataset(training)?;
    let report = AopcReport::evaluate(&model, &training, options, steps)?;
    let (paper, per_term) = match norm {
        NormArg::Paper => (true, false),
        NormArg::PerTerm => (false, true),
        NormArg::Both => (true, true),
    };
    let scores = tables::aopc_csv(&report, paper, per_term);
    emit(out, "aopc.csv", &scores, stdout)?;
    if let Some(dir) = out {
        let mut curves = tables::curves_csv("faith", &report.faith.curves);
        let legacy = tables::curves_csv("legacy", &report.legacy.curves);
        curves.extend(legacy.lines().skip(1).map(|l| format!("{l}\n")));
        write_file(&dir.join("curves.csv"), curves.as_bytes())?;
        let summary = format!(
            "prototypes,faith_better\n{},{}\n",
            report.prototypes(),
            report.faith_better
        );
        write_file(&dir.join("summary.csv"), summary.as_bytes())?;
    }
    Ok(())
}

fn cmd_validate(
    kind: KindArg,
    seed: u64,
    samples: usize,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let kind = match kind {
        KindArg::Relu => MomentKind::Relu,
        KindArg::Relu1 => MomentKind::Relu1,
        KindArg::Quadratic => MomentKind::QuadraticForm,
        KindArg::Minpool => MomentKind::MinPool,
    };
    let report = validate_moments(&kind.default_grid(seed), samples, seed)?;
    emit(
        out,
        &format!("validate_{}.csv", kind.name()),
        &tables::moments_csv(&report),
        stdout,
    )?;
    if !report.passed() {
        let failed = report.checks.iter().filter(|c| !c.pass).count();
        return Err(Error::Core(protofaith_core::Error::InvalidArgument(
            format!(
                "{failed} of {} {} cases failed validation",
                report.checks.len(),
                kind.name()
            ),
        )));
    }
    Ok(())
}

/// Verdict text of the counterexample; the flag is true when all three claims hold.
pub fn counterexample_verdict() -> Result<(String, bool)> {
    let (model, image, (r, c)) = counterexample_fixture();
    let latent = protopnet::latent(&model, &image)?;
    let [lh, lw, _] = model.latent_shape();
    let active: Vec<(usize, usize)> = (0..lh)
        .flat_map(|i| (0..lw).map(move |j| (i, j)))
        .filter(|&(i, j)| latent.at3(i, j, 0) != 0.0)
        .collect();
    let spec = SetFunctionSpec::with_options(
        &model,
        Target::Latent {
            row: r,
            col: c,
            channel: 0,
        },
        &image,
        0.0,
        Granularity::Pixel,
    )?;
    let oracle = exact_shapley(&spec)?;
    let w = model.input_shape()[1];
    let support: Vec<(usize, usize)> = (0..oracle.values.len())
        .filter(|&i| oracle.values[i] != 0.0)
        .map(|i| (i / w, i % w))
        .collect();
    let legacy = legacy_as_attribution(&legacy_map(&model, &image, 0)?);
    let best = legacy.ranking()[0];
    let legacy_max = (best / w, best % w);

    let activation_ok = active == [COUNTEREXAMPLE_ACTIVATION];
    let support_ok = support == [(0, 0)];
    let legacy_ok = legacy_max != (0, 0);
    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let all = activation_ok && support_ok && legacy_ok;
    let text = format!(
        "forward activation at {active:?}: {}\noracle support {support:?}: {}\nlegacy maximum at {legacy_max:?}: {}\n\
         oracle value at (0, 0): {}\nlegacy value at (0, 0): {}, at maximum: {}\nverdict: {}\n",
        mark(activation_ok),
        mark(support_ok),
        mark(legacy_ok),
        tables::num(oracle.values[0]),
        tables::num(legacy.values[0]),
        tables::num(legacy.values[best]),
        mark(all)
    );
    Ok((text, all))
}

fn cmd_counterexample(out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let (text, ok) = counterexample_verdict()?;
    emit(out, "verdict.txt", &text, stdout)?;
    if !ok {
        return Err(Error::Core(protofaith_core::Error::InvalidArgument(
            "the counterexample did not reproduce".into(),
        )));
    }
    Ok(())
}

fn cmd_generate(
    seed: u64,
    config: ConfigArg,
    input: Option<[usize; 3]>,
    images_per_class: usize,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut cfg = match config {
        ConfigArg::Reference => DeskConfig::reference(),
        ConfigArg::Random => DeskConfig::from_seed(seed),
    };
    if let Some(d) = input {
        cfg.input = d;
    }
    if images_per_class == 0 {
        return Err(Error::Usage("--images-per-class must be at least 1".into()));
    }
    let (model, training): (ModelSpec, Vec<LabeledImage>) =
        projected_model(&cfg, images_per_class, seed)?;
    let test = random_images(cfg.input, 1, seed.wrapping_add(2)).remove(0);
    out_dir(out)?;
    io::save_model(&model, &out.join("model.json"))?;
    io::save_dataset(&training, &out.join("training.json"))?;
    io::save_tensor(&test, &out.join("image.txt"))?;
    writeln!(
        stdout,
        "wrote model.json ({} prototypes), training.json ({} images) and image.txt to {}",
        model.prototypes().len(),
        training.len(),
        out.display()
    )
    .map_err(|e| Error::io("<stdout>", e))
}
