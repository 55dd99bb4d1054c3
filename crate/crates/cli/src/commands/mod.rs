//! One module per subcommand. Each exposes clap args, `run` for the parsed
//! command line, and `from_config` so a written `config.txt` replays the
//! exact same work into a fresh output directory.

pub mod evalcmd;
pub mod explain;
pub mod metacmd;
pub mod saliency;
pub mod synth;
pub mod train;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use maskexplain_core::blackbox::{argmax, BlackBox};
use maskexplain_core::explain::Game;
use maskexplain_core::grid::Image;
use maskexplain_core::perturb::{PerturbKind, PerturbSpec};

use crate::corpusio;
use crate::error::{CliError, CliResult};
use crate::mpt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GameArg {
    Deletion,
    Preservation,
}

impl GameArg {
    pub fn to_game(self) -> Game {
        match self {
            GameArg::Deletion => Game::Deletion,
            GameArg::Preservation => Game::Preservation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PerturbArg {
    Constant,
    Noise,
    Blur,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Grad,
    Gradxinput,
    Occlusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Localization,
    Pointing,
    Deletion,
    Slices,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Q1,
    Q2,
    Q3,
    Ridge,
}

macro_rules! arg_strings {
    ($ty:ty { $($variant:pat => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($variant => $name),+
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = CliError;
            fn from_str(s: &str) -> CliResult<Self> {
                <$ty as ValueEnum>::value_variants()
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| {
                        CliError::usage(format!(
                            concat!("unknown ", stringify!($ty), " value {:?}"),
                            s
                        ))
                    })
            }
        }
    };
}

arg_strings!(GameArg { GameArg::Deletion => "deletion", GameArg::Preservation => "preservation" });
arg_strings!(PerturbArg { PerturbArg::Constant => "constant", PerturbArg::Noise => "noise", PerturbArg::Blur => "blur" });
arg_strings!(MethodArg { MethodArg::Grad => "grad", MethodArg::Gradxinput => "gradxinput", MethodArg::Occlusion => "occlusion" });
arg_strings!(ProtocolArg { ProtocolArg::Localization => "localization", ProtocolArg::Pointing => "pointing", ProtocolArg::Deletion => "deletion", ProtocolArg::Slices => "slices" });
arg_strings!(RuleArg { RuleArg::Q1 => "q1", RuleArg::Q2 => "q2", RuleArg::Q3 => "q3", RuleArg::Ridge => "ridge" });

pub(crate) fn ensure_out_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| crate::error::io_err("create", path, e))
}

/// Builds the perturbation for an image: constant and noise fill toward the
/// image's channel means, blur uses its default strength.
pub(crate) fn perturb_spec_for(
    kind: PerturbArg,
    x0: &Image,
    seed: u64,
    flip_blur: bool,
) -> PerturbSpec {
    let mut spec = match kind {
        PerturbArg::Constant => PerturbSpec::constant(x0.channel_means()),
        PerturbArg::Noise => PerturbSpec::noise(
            x0.channel_means(),
            maskexplain_core::perturb::DEFAULT_NOISE_SIGMA,
            seed,
        ),
        PerturbArg::Blur => PerturbSpec::blur(maskexplain_core::perturb::DEFAULT_SIGMA0),
    };
    spec.flip_blur_convention = flip_blur;
    debug_assert!(spec.kind == kind.to_kind());
    spec
}

impl PerturbArg {
    pub fn to_kind(self) -> PerturbKind {
        match self {
            PerturbArg::Constant => PerturbKind::Constant,
            PerturbArg::Noise => PerturbKind::Noise,
            PerturbArg::Blur => PerturbKind::Blur,
        }
    }
}

/// The image a command works on: an MPT1 file, or one slot of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    Corpus { dir: PathBuf, index: usize },
}

impl ImageSource {
    pub fn from_flags(
        image: Option<&Path>,
        corpus: Option<&Path>,
        index: Option<usize>,
    ) -> CliResult<ImageSource> {
        match (image, corpus, index) {
            (Some(p), None, None) => Ok(ImageSource::File(p.to_path_buf())),
            (None, Some(d), Some(i)) => {
                Ok(ImageSource::Corpus { dir: d.to_path_buf(), index: i })
            }
            _ => Err(CliError::usage(
                "give either --image FILE or both --corpus DIR and --index I",
            )),
        }
    }

    pub fn from_config(cfg: &crate::config::ConfigMap) -> CliResult<ImageSource> {
        match (cfg.get("image"), cfg.get("corpus")) {
            (Some(p), None) => Ok(ImageSource::File(PathBuf::from(p))),
            (None, Some(d)) => Ok(ImageSource::Corpus {
                dir: PathBuf::from(d),
                index: cfg.parsed("index")?,
            }),
            _ => Err(CliError::usage("config needs either image= or corpus= plus index=")),
        }
    }

    pub fn load(&self) -> CliResult<Image> {
        match self {
            ImageSource::File(p) => mpt::read_image(p),
            ImageSource::Corpus { dir, index } => {
                let corpus = corpusio::read_corpus(dir)?;
                if *index >= corpus.len() {
                    return Err(CliError::usage(format!(
                        "--index {index} is out of range for a corpus of {}",
                        corpus.len()
                    )));
                }
                Ok(corpus.image(*index).clone())
            }
        }
    }

    /// Corpus slot index, when the image came from a corpus.
    pub fn corpus_index(&self) -> Option<usize> {
        match self {
            ImageSource::File(_) => None,
            ImageSource::Corpus { index, .. } => Some(*index),
        }
    }

    pub fn record(&self, cfg: &mut crate::config::ConfigMap) {
        match self {
            ImageSource::File(p) => cfg.set("image", p.display()),
            ImageSource::Corpus { dir, index } => {
                cfg.set("corpus", dir.display());
                cfg.set("index", index);
            }
        }
    }
}

/// The class a run targets: the flag value, or the model's top class on the
/// image when no flag was given.
pub(crate) fn resolve_class(
    model: &dyn BlackBox,
    x0: &Image,
    class: Option<usize>,
) -> CliResult<usize> {
    match class {
        Some(c) => {
            if c >= model.num_classes() {
                return Err(CliError::usage(format!(
                    "--class {c} is out of range for a model with {} classes",
                    model.num_classes()
                )));
            }
            Ok(c)
        }
        None => Ok(argmax(&model.score(x0)?)),
    }
}

/// Parses a threshold grid: either "start:step:end" (inclusive) or a
/// comma-separated list.
pub(crate) fn parse_alpha_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = |why: &str| CliError::usage(format!("invalid alpha grid {s:?}: {why}"));
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:step:end"));
        }
        let (start, step, end) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(bad("need step > 0 and end >= start"));
        }
        let count = ((end - start) / step + 1e-9) as usize + 1;
        (0..count).map(|i| start + i as f64 * step).collect()
    } else {
        s.split(',').map(parse).collect::<CliResult<Vec<f64>>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("empty or non-finite"));
    }
    Ok(values)
}

pub(crate) fn parse_angle_list(s: &str) -> CliResult<Vec<u32>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| CliError::usage(format!("invalid angle list {s:?}")))
        })
        .collect()
}
