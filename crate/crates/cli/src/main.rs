//! `fecnet` command-line driver.
//!
//! Exit codes: 0 on success, 2 for usage, input and configuration errors,
//! 3 for failures while running.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use fecnet::channel::{modulate, SymbolBlock};
use fecnet::coding::{encode_bits, CodeSpec};
use fecnet::config::ExperimentConfig;
use fecnet::losses::nve_with_floors;
use fecnet::nn::count_params;
use fecnet::pipeline::report::{parse_sweep_csv, sweep_csv, sweep_svg, train_log_csv};
use fecnet::pipeline::{ber_sweep, measure_latency, Checkpoint, Decoder, SweepRow, Trainer};
use fecnet::viterbi::{build_trellis, viterbi_decode};

#[derive(Parser)]
#[command(name = "fecnet", version, about = "Convolutional codes, Viterbi and U-Net decoding over BPSK/AWGN")]
struct Cli {
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode bits (whitespace or newline separated) into a zero-tailed codeword.
    Encode {
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Emit BPSK symbols instead of code bits.
        #[arg(long)]
        symbols: bool,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Decode received symbols with the Viterbi algorithm.
    Viterbi {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Input holds hard code bits rather than real-valued symbols.
        #[arg(long)]
        bits: bool,
        #[command(flatten)]
        code: CodeArgs,
    },
    /// Train a U-Net decoder; writes a checkpoint and a training log.
    Train,
    /// Simulate BER over the configured SNR list.
    Sweep {
        /// Comma-separated: unet, viterbi, uncoded.
        #[arg(long, default_value = "viterbi", value_delimiter = ',')]
        decoder: Vec<String>,
        /// U-Net checkpoint; defaults to the configured output path.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Normalized validation error of a neural decoder sweep against a Viterbi sweep.
    Nve {
        nnd_csv: PathBuf,
        viterbi_csv: PathBuf,
        /// Report file to append to; defaults to the configured output path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Parameter count, layer table and decode latency of a checkpoint.
    Info {
        checkpoint: PathBuf,
        /// Blocks timed for the latency estimate.
        #[arg(long, default_value_t = 20)]
        blocks: usize,
    },
}

#[derive(clap::Args)]
struct CodeArgs {
    /// Octal generators, used when no config is given.
    #[arg(long, default_value = "7,5")]
    generators: String,
    #[arg(long, default_value_t = 2)]
    memory: u32,
}

/// Bad input or configuration supplied by the user.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use fecnet::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NonFiniteLoss { .. } => 3,
                E::Io(_)
                | E::Config(_)
                | E::Checkpoint(_)
                | E::GridMismatch(_)
                | E::EmptyMessage
                | E::NonBinary { .. }
                | E::InvalidArgument(_)
                | E::InvalidCode(_)
                | E::GeneratorMemoryMismatch { .. }
                | E::LengthMismatch { .. } => 2,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { seed: cli.seed, config: cli.config, out: cli.out };
    match cli.command {
        Command::Encode { input, output, symbols, code } => cmd_encode(&ctx, &input, output.as_deref(), symbols, &code),
        Command::Viterbi { input, output, bits, code } => cmd_viterbi(&ctx, &input, output.as_deref(), bits, &code),
        Command::Train => cmd_train(&ctx),
        Command::Sweep { decoder, checkpoint } => cmd_sweep(&ctx, &decoder, checkpoint.as_deref()),
        Command::Nve { nnd_csv, viterbi_csv, report } => cmd_nve(&ctx, &nnd_csv, &viterbi_csv, report.as_deref()),
        Command::Info { checkpoint, blocks } => cmd_info(&ctx, &checkpoint, blocks),
    }
}

struct Ctx {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: PathBuf,
}

impl Ctx {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_deref().ok_or_else(|| usage("this command needs --config <path>"))?;
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = ExperimentConfig::parse(&text).map_err(fecnet::Error::from)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }

    fn code(&self, args: &CodeArgs) -> Result<CodeSpec> {
        if self.config.is_some() {
            return Ok(self.experiment()?.train.code);
        }
        let gens: Vec<&str> = args.generators.split(',').map(str::trim).collect();
        Ok(CodeSpec::from_octal(&gens, args.memory)?)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

/// Whitespace-separated tokens with the line each came from.
fn tokens(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let toks: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t.to_string())))
        .collect();
    if toks.is_empty() {
        return Err(usage(format!("{} is empty", path.display())));
    }
    Ok(toks)
}

fn parse_bits(path: &Path) -> Result<Vec<u8>> {
    tokens(path)?
        .into_iter()
        .map(|(line, t)| match t.as_str() {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(usage(format!("{} line {line}: `{t}` is not a bit", path.display()))),
        })
        .collect()
}

fn write_lines(output: Option<&Path>, lines: impl Iterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_encode(ctx: &Ctx, input: &Path, output: Option<&Path>, symbols: bool, args: &CodeArgs) -> Result<()> {
    let code = ctx.code(args)?;
    let bits = parse_bits(input)?;
    let cw = encode_bits(&code, &bits)?.interleave();
    if symbols {
        write_lines(output, modulate(&cw)?.into_symbols().into_iter().map(|s| s.to_string()))
    } else {
        write_lines(output, cw.into_iter().map(|b| b.to_string()))
    }
}

fn cmd_viterbi(ctx: &Ctx, input: &Path, output: Option<&Path>, bits: bool, args: &CodeArgs) -> Result<()> {
    let code = ctx.code(args)?;
    let rx = if bits {
        modulate(&parse_bits(input)?)?
    } else {
        let symbols = tokens(input)?
            .into_iter()
            .map(|(line, t)| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| usage(format!("{} line {line}: `{t}` is not a finite number", input.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        SymbolBlock::new(symbols)
    };
    let (msg, _) = viterbi_decode(&build_trellis(&code), &rx)?;
    write_lines(output, msg.bits().iter().map(|b| b.to_string()))
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.experiment()?;
    let paths = cfg.output.resolve(ctx.out_dir()?);
    let mut trainer = Trainer::new(&cfg.train)?;
    println!(
        "training {} L={} on a {}x{} grid, {} parameters, {} steps",
        cfg.train.code.label(),
        cfg.train.block_length,
        trainer.grid().side(),
        trainer.grid().side(),
        trainer.model().param_count(),
        trainer.total_steps()
    );
    let logs = trainer.run(|l| {
        println!("epoch {:>4}  loss {:.6}  batch ber {:.6}", l.epoch, l.mean_loss, l.mean_batch_ber);
    })?;
    trainer.checkpoint().save(&paths.checkpoint)?;
    fs::write(&paths.train_log, train_log_csv(&logs))?;
    println!("wrote {} and {}", paths.checkpoint.display(), paths.train_log.display());
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, decoders: &[String], checkpoint: Option<&Path>) -> Result<()> {
    let cfg = ctx.experiment()?;
    let paths = cfg.output.resolve(ctx.out_dir()?);
    let code = cfg.train.code;
    let seed = cfg.train.seed;
    let mut rows = Vec::new();
    for name in decoders {
        let points = match name.trim() {
            "viterbi" => ber_sweep(Decoder::Viterbi, &code, cfg.train.block_length, &cfg.sweep, seed)?,
            "uncoded" => ber_sweep(Decoder::Uncoded, &code, cfg.train.block_length, &cfg.sweep, seed)?,
            "unet" => {
                let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| paths.checkpoint.clone());
                let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
                let want = cfg.train.grid()?;
                if ckpt.grid != want || ckpt.config.code != code {
                    return Err(fecnet::Error::GridMismatch(format!(
                        "checkpoint is {} on a {}x{} grid with L={}, config asks for {} on {}x{} with L={}",
                        ckpt.config.code.label(),
                        ckpt.grid.side(),
                        ckpt.grid.side(),
                        ckpt.grid.msg_len(),
                        code.label(),
                        want.side(),
                        want.side(),
                        want.msg_len()
                    ))
                    .into());
                }
                let net = ckpt.model()?;
                ber_sweep(Decoder::UNet(&net), &code, cfg.train.block_length, &cfg.sweep, seed)?
            }
            other => return Err(usage(format!("unknown decoder `{other}`; expected unet, viterbi or uncoded"))),
        };
        for p in &points {
            println!("{:<8} {:>6.2} dB  bits {:>9}  errors {:>7}  ber {:.3e}", name, p.snr_db, p.report.bits_counted, p.report.bit_errors, p.report.ber());
            rows.push(SweepRow::from_point(name.trim(), &code, p));
        }
    }
    fs::write(&paths.sweep_csv, sweep_csv(&rows))?;
    fs::write(&paths.sweep_svg, sweep_svg(&rows))?;
    println!("wrote {} and {}", paths.sweep_csv.display(), paths.sweep_svg.display());
    Ok(())
}

fn cmd_nve(ctx: &Ctx, nnd: &Path, vit: &Path, report: Option<&Path>) -> Result<()> {
    let read = |p: &Path| -> Result<Vec<SweepRow>> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        parse_sweep_csv(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let (a, b) = (read(nnd)?, read(vit)?);
    let grid = |rows: &[SweepRow]| rows.iter().map(|r| r.snr_db).collect::<Vec<_>>();
    if grid(&a) != grid(&b) {
        return Err(usage(format!("SNR grids differ: {:?} vs {:?}", grid(&a), grid(&b))));
    }
    let ber_a: Vec<f64> = a.iter().map(|r| r.ber).collect();
    let ber_b: Vec<f64> = b.iter().map(|r| r.ber).collect();
    let floors: Vec<u64> = b.iter().map(|r| r.bits).collect();
    let value = nve_with_floors(&ber_a, &ber_b, &floors)?;
    println!("NVE = {value}");
    let report = match report {
        Some(p) => p.to_path_buf(),
        None => match &ctx.config {
            Some(_) => ctx.experiment()?.output.resolve(ctx.out_dir()?).report,
            None => ctx.out_dir()?.join("report.txt"),
        },
    };
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&report)?;
    writeln!(f, "nve nnd={} viterbi={} points={} value={value}", nnd.display(), vit.display(), a.len())?;
    Ok(())
}

fn cmd_info(ctx: &Ctx, path: &Path, blocks: usize) -> Result<()> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let net = ckpt.model()?;
    let analytic = count_params(&ckpt.config.net)?;
    if analytic != net.param_count() {
        return Err(anyhow!("parameter count {} differs from the analytic {analytic}", net.param_count()));
    }
    let c = &ckpt.config;
    println!("code            {}", c.code.label());
    println!("block length    {}", c.block_length);
    println!("grid            {0}x{0}", ckpt.grid.side());
    println!("net             depth {} base {} ({} loss)", c.net.depth, c.net.base_channels, c.loss);
    println!("steps           {}", ckpt.step);
    println!("parameters      {}", net.param_count());
    println!();
    println!("{:<28} {:>18} {:>10}", "layer", "shape", "params");
    for row in net.summary() {
        println!("{:<28} {:>18} {:>10}", row.name, format!("{:?}", row.shape), row.count);
    }
    let seed = ctx.seed.unwrap_or(c.seed);
    let lat = measure_latency(Decoder::UNet(&net), &c.code, c.block_length, blocks.max(1), seed)?;
    let vit = measure_latency(Decoder::Viterbi, &c.code, c.block_length, blocks.max(1), seed)?;
    println!();
    println!("timing (wall clock, {} blocks, {})", lat.n_blocks, lat.environment);
    for r in [&lat, &vit] {
        println!(
            "  {:<8} median {:.3e} s/block, batched {:.3e} s/block",
            r.decoder, r.median_block_secs, r.batched_block_secs
        );
    }
    Ok(())
}
