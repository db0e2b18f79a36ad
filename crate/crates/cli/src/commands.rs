use std::path::{Path, PathBuf};

use ced_core::encoder::{fine_tune, train_ctc, AudioEncoder, EncoderCheckpoint};
use ced_core::eval::{build_test_pairs, evaluate, PairMode, TestPairConfig};
use ced_core::features::{build_synthetic_corpus, load_audio_input, Manifest};
use ced_core::p2v::{build_p2v, BuildP2VConfig, P2VDatabase};
use ced_core::phonemes::{grapheme_to_phoneme, Lexicon, PhonemeVocabulary};
use ced_core::training::{
    edit_inventory, generate_confusable, train_ced, ConfusableSpec, Dataset, EditOp,
};
use ced_core::verifier::{verify, Bundle};
use ced_core::CedError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::{Cli, Command, EvalArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] CedError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Resolves relative paths against `CED_WORKDIR` when it is set.
struct Paths {
    root: Option<PathBuf>,
}

impl Paths {
    fn from_env() -> Self {
        Self {
            root: std::env::var_os("CED_WORKDIR").map(PathBuf::from),
        }
    }

    fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn input(&self, p: &Path) -> Result<PathBuf> {
        let resolved = self.path(p);
        if resolved.exists() {
            Ok(resolved)
        } else {
            Err(CliError::Usage(format!(
                "no such file or directory: {}",
                resolved.display()
            )))
        }
    }

    fn output(&self, p: &Path) -> Result<PathBuf> {
        let resolved = self.path(p);
        if let Some(parent) = resolved.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| CedError::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        Ok(resolved)
    }

    fn config(&self, p: Option<&PathBuf>) -> Result<PipelineConfig> {
        match p {
            Some(p) => PipelineConfig::load(&self.input(p)?).map_err(CliError::Usage),
            None => Ok(PipelineConfig::default()),
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CedError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| CliError::Usage(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CedError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

struct Resources {
    vocab: PhonemeVocabulary,
    lexicon: Lexicon,
}

fn resources(
    paths: &Paths,
    vocab: Option<&PathBuf>,
    lexicon: Option<&PathBuf>,
) -> Result<Resources> {
    let vocab = match vocab {
        Some(p) => PhonemeVocabulary::load(&paths.input(p)?)?,
        None => PhonemeVocabulary::arpabet(),
    };
    let lexicon = match lexicon {
        Some(p) => Lexicon::load(&paths.input(p)?, &vocab)?,
        None => Lexicon::bundled(&vocab),
    };
    Ok(Resources { vocab, lexicon })
}

pub fn run(cli: Cli) -> Result<()> {
    let paths = Paths::from_env();
    match &cli.command {
        Command::Synth { config, out } => {
            let config = paths.config(Some(config))?;
            let res = resources(
                &paths,
                cli.vocab.as_ref().or(config.vocabulary.as_ref()),
                cli.lexicon.as_ref().or(config.lexicon.as_ref()),
            )?;
            let spec = config
                .synth
                .ok_or_else(|| CliError::Usage("config has no \"synth\" section".into()))?;
            let out = paths.output(&paths.path(out).join("manifest.jsonl"))?;
            let dir = out.parent().expect("joined path has a parent");
            let manifest = Manifest::load(&build_synthetic_corpus(
                &spec,
                &res.lexicon,
                &res.vocab,
                dir,
            )?)?;
            // Round-robin split: every tenth utterance to dev, the next to test.
            for (name, keep) in [("train", [2, 10]), ("dev", [0, 1]), ("test", [1, 2])] {
                let part = manifest.filter(|i, _| (keep[0]..keep[1]).contains(&(i % 10)));
                part.write(&dir.join(format!("{name}.jsonl")))?;
            }
            println!("{} utterances in {}", manifest.len(), dir.display());
        }
        Command::TrainEncoder {
            config,
            manifest,
            dev,
            out,
        } => {
            let config = paths.config(config.as_ref())?;
            let res = resources(
                &paths,
                cli.vocab.as_ref().or(config.vocabulary.as_ref()),
                None,
            )?;
            let train = Manifest::load(&paths.input(manifest)?)?;
            let dev = dev
                .as_ref()
                .map(|d| paths.input(d).and_then(|p| Ok(Manifest::load(&p)?)))
                .transpose()?;
            let (ckpt, report) = train_ctc(
                &train,
                dev.as_ref(),
                &config.encoder,
                &config.features,
                &config.train_ctc,
                &res.vocab,
            )?;
            let out = paths.output(out)?;
            ckpt.save(&out)?;
            write_jsonl(&out.with_extension("log.jsonl"), &report.epochs)?;
            println!(
                "encoder with {} parameters written to {} ({} steps, {} utterances skipped)",
                report.param_count,
                out.display(),
                report.steps,
                report.skipped
            );
        }
        Command::FineTune {
            config,
            encoder,
            manifest,
            dev,
            out,
        } => {
            let config = paths.config(config.as_ref())?;
            let res = resources(
                &paths,
                cli.vocab.as_ref().or(config.vocabulary.as_ref()),
                None,
            )?;
            let ckpt = EncoderCheckpoint::load(&paths.input(encoder)?)?;
            let train = Manifest::load(&paths.input(manifest)?)?;
            let dev = dev
                .as_ref()
                .map(|d| paths.input(d).and_then(|p| Ok(Manifest::load(&p)?)))
                .transpose()?;
            let (tuned, report) =
                fine_tune(&ckpt, &train, dev.as_ref(), &config.fine_tune, &res.vocab)?;
            let out = paths.output(out)?;
            tuned.save(&out)?;
            write_jsonl(&out.with_extension("log.jsonl"), &report.epochs)?;
            println!(
                "fine-tuned encoder written to {} ({} steps)",
                out.display(),
                report.steps
            );
        }
        Command::BuildP2v {
            encoder,
            manifest,
            cap,
            seed,
            allow_fallback,
            out,
        } => {
            let res = resources(&paths, cli.vocab.as_ref(), None)?;
            let encoder = AudioEncoder::new(EncoderCheckpoint::load(&paths.input(encoder)?)?)?;
            let manifest = Manifest::load(&paths.input(manifest)?)?;
            let config = BuildP2VConfig {
                sample_cap: *cap,
                seed: *seed,
                allow_fallback: *allow_fallback,
                retain_local_vectors: false,
            };
            let build = build_p2v(&manifest, &encoder, &res.vocab, &config)?;
            let out = paths.output(out)?;
            build.database.save(&out, &res.vocab)?;
            write_json(&out.with_extension("report.json"), &build.report)?;
            println!(
                "{} phonemes from {} utterances (CER-0 yield {:.3}) written to {}",
                build.database.phonemes().len(),
                build.report.sampled_utterances,
                build.report.cer_zero_yield,
                out.display()
            );
        }
        Command::TrainCed {
            config,
            encoder,
            p2v,
            manifest,
            dev,
            no_confusables,
            out,
        } => {
            let config = paths.config(config.as_ref())?;
            let res = resources(
                &paths,
                cli.vocab.as_ref().or(config.vocabulary.as_ref()),
                None,
            )?;
            let ckpt = EncoderCheckpoint::load(&paths.input(encoder)?)?;
            let db = P2VDatabase::load(&paths.input(p2v)?, &res.vocab)?;
            let audio = AudioEncoder::new(ckpt.clone())?;
            let train = Dataset::embed(
                &Manifest::load(&paths.input(manifest)?)?,
                &audio,
                &res.vocab,
            )?;
            let dev = match dev {
                Some(d) => Some(Dataset::embed(
                    &Manifest::load(&paths.input(d)?)?,
                    &audio,
                    &res.vocab,
                )?),
                None => None,
            };
            let mut ced = config.ced.clone();
            if *no_confusables {
                ced.use_confusables = false;
            }
            let (verifier, report) = train_ced(&ckpt, &db, &train, dev.as_ref(), &ced, &res.vocab)?;
            let out = paths.output(out)?;
            verifier.save(&out)?;
            report.write_log(&out.with_extension("log.jsonl"))?;
            println!(
                "verifier written to {} ({} steps, {} unalignable pairs skipped)",
                out.display(),
                report.steps,
                report.skipped_pairs
            );
        }
        Command::Bundle {
            encoder,
            p2v,
            verifier,
            threshold,
            out,
        } => {
            let res = resources(&paths, cli.vocab.as_ref(), None)?;
            let out = paths.output(out)?;
            Bundle::assemble(
                &out,
                &paths.input(encoder)?,
                &paths.input(p2v)?,
                &paths.input(verifier)?,
                &res.vocab,
                *threshold,
            )?;
            println!("bundle written to {}", out.display());
        }
        Command::Eval(args) => eval(&paths, &cli, args)?,
        Command::Verify {
            bundle,
            audio,
            text,
            threshold,
        } => {
            let res = resources(&paths, cli.vocab.as_ref(), cli.lexicon.as_ref())?;
            let bundle = Bundle::load(&paths.input(bundle)?, &res.vocab)?;
            let features = load_audio_input(&paths.input(audio)?)?;
            let threshold = match threshold.or(bundle.threshold()) {
                Some(t) => t,
                None => {
                    log::warn!("bundle has no stored threshold; using 0.5");
                    0.5
                }
            };
            let v = verify(&features, text, &res.lexicon, &bundle)?;
            let decision = if v.score >= threshold {
                "match"
            } else {
                "non-match"
            };
            let note = if v.infeasible {
                " (audio too short to align)"
            } else {
                ""
            };
            println!(
                "score {:.6} {decision} threshold {threshold:.6}{note}",
                v.score
            );
        }
        Command::Confusables {
            keyword,
            delta,
            count,
            seed,
            ops,
        } => {
            let res = resources(&paths, cli.vocab.as_ref(), cli.lexicon.as_ref())?;
            let allowed_ops = ops
                .split(',')
                .map(|op| match op.trim() {
                    "replace" => Ok(EditOp::Replace),
                    "insert" => Ok(EditOp::Insert),
                    other => Err(CliError::Usage(format!("unknown edit operation {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let spec = ConfusableSpec {
                delta: *delta,
                allowed_ops,
                max_attempts: 32,
            };
            spec.validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let phonemes = grapheme_to_phoneme(keyword, &res.lexicon, &res.vocab)?;
            let inventory = res.vocab.pronounceable();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for _ in 0..*count {
                let c = generate_confusable(&phonemes, &spec, &inventory, &mut rng)?;
                println!("{}", c.sequence.render(&res.vocab));
            }
        }
    }
    Ok(())
}

fn eval(paths: &Paths, cli: &Cli, args: &EvalArgs) -> Result<()> {
    let config = paths.config(args.config.as_ref())?;
    let res = resources(
        paths,
        cli.vocab.as_ref().or(config.vocabulary.as_ref()),
        None,
    )?;
    let mut bundle = Bundle::load(&paths.input(&args.bundle)?, &res.vocab)?;
    let mode: PairMode = args.mode.parse()?;
    let manifest = Manifest::load(&paths.input(&args.manifest)?)?;
    let dataset = Dataset::embed(&manifest, &bundle.encoder, &res.vocab)?;
    let seed = args.seed.unwrap_or(config.eval.seed);
    let pair_config = TestPairConfig {
        mode,
        per_anchor: args.per_anchor.unwrap_or(config.eval.per_anchor),
        boundary: config.eval.boundary,
        confusable_fallback: config.eval.confusable_fallback,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inventory = edit_inventory(&bundle.p2v, &res.vocab);
    let pairs = build_test_pairs(&dataset, &pair_config, &inventory, &mut rng)?;
    let mut report = evaluate(&bundle, &dataset, &pairs, mode)?;
    report.seed = Some(seed);
    let out = paths.output(&args.out)?;
    report.save(&out)?;
    if args.store_threshold {
        bundle.store_threshold(report.threshold_at_eer)?;
    }
    println!(
        "{mode}: AUC {:.2} EER {:.2} threshold {:.6} ({} positives, {} negatives)",
        report.auc, report.eer, report.threshold_at_eer, report.n_pos, report.n_neg
    );
    Ok(())
}
