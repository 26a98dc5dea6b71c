//! Options shared by every subcommand, merged from the command line and an
//! optional TOML file. Command-line values win.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Options {
    /// RNG seed for training shuffles, initialization and PGD random starts.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated attacks: pgd, pgd-ssim, enet, ssim, ssim-e.
    #[arg(long)]
    pub attacks: Option<String>,
    /// Use only the first n eligible images (training: the first n images).
    #[arg(long)]
    pub limit: Option<usize>,
    /// L-infinity budget for PGD, in attacks and in adversarial training.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Luminance-factor threshold of the SSIM attack.
    #[arg(long)]
    pub zeta1: Option<f64>,
    /// Contrast-structure-factor threshold of the SSIM attack.
    #[arg(long)]
    pub zeta2: Option<f64>,
    /// Adam learning rate of the SSIM attack's dual update.
    #[arg(long)]
    pub dual_lr: Option<f64>,
    /// Rounds of the search over the loss scale c.
    #[arg(long)]
    pub search_steps: Option<usize>,
    /// Iterations per search round for the ENet and SSIM attacks.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Directory holding MNIST-layout IDX files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model checkpoint; defaults to `<out>/model.bin`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Leading training epochs without adversarial examples.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// PGD steps, in attacks and in adversarial training.
    #[arg(long)]
    pub pgd_steps: Option<usize>,
    /// Network preset for training: desk or wide.
    #[arg(long)]
    pub arch: Option<String>,
}

macro_rules! merge {
    ($a:ident, $b:ident; $($f:ident),*) => {
        Options { $($f: $a.$f.or($b.$f)),* }
    };
}

impl Options {
    /// Fields set in `self`, falling back to `other`.
    pub fn or(self, other: Options) -> Options {
        let (a, b) = (self, other);
        merge!(a, b; seed, out, attacks, limit, epsilon, zeta1, zeta2, dual_lr, search_steps, iters, data, model, epochs, lr, warmup, pgd_steps, arch)
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Options> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::Error::new(ssimadv::Error::config(format!("{}: {e}", path.display()))))
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn data(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| PathBuf::from("data/mnist-desk"))
    }

    pub fn model(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out().join("model.bin"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
