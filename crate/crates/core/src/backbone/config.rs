//! Network configuration: profiles, fusion strategies, and the closed-form
//! parameter count that every built model is checked against.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How the two contrast phases are combined, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// One phase, one encoder.
    Single,
    /// Both phases stacked on the input channel axis, one wider encoder.
    Dmp,
    /// Two encoders, shared decoder run per phase, output maps averaged.
    Mpf,
    /// Two encoders, features concatenated at every decoder tap.
    Msf,
    /// Two encoders, features fused by the phase-attention block at every tap.
    PaMsf,
}

impl Fusion {
    pub fn uses_two_encoders(self) -> bool {
        matches!(self, Fusion::Mpf | Fusion::Msf | Fusion::PaMsf)
    }

    /// Decoder tap widths double when per-level feature fusion is active.
    pub fn fuses_taps(self) -> bool {
        matches!(self, Fusion::Msf | Fusion::PaMsf)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Fusion::Single),
            "dmp" => Ok(Fusion::Dmp),
            "mpf" => Ok(Fusion::Mpf),
            "msf" => Ok(Fusion::Msf),
            "pa_msf" => Ok(Fusion::PaMsf),
            other => Err(Error::config(format!(
                "unknown fusion strategy {other:?} (expected single, dmp, mpf, msf, or pa_msf)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Fusion::Single => "single",
            Fusion::Dmp => "dmp",
            Fusion::Mpf => "mpf",
            Fusion::Msf => "msf",
            Fusion::PaMsf => "pa_msf",
        }
    }
}

/// Full architectural description of a segmentation network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input patch edge length in pixels; must survive five halvings.
    pub patch_size: usize,
    /// Channel widths of the first conv pair and the five encoder stages.
    pub stage_channels: Vec<usize>,
    /// Channels of one input patch (each phase patch under dmp contributes
    /// half of this).
    pub input_channels: usize,
    pub fusion: Fusion,
    /// Identity skips across each conv pair (1x1 projection on width change).
    #[serde(default = "default_true")]
    pub residual_skips: bool,
    /// Use the literal printed sign in the channel-gain exponent instead of
    /// the corrected one.
    #[serde(default)]
    pub eq3_as_printed: bool,
}

fn default_true() -> bool {
    true
}

impl NetworkConfig {
    /// Full-size profile matching the published architecture table.
    pub fn paper(fusion: Fusion) -> Self {
        Self {
            patch_size: 224,
            stage_channels: vec![64, 128, 256, 512, 512, 512],
            input_channels: if fusion == Fusion::Dmp { 6 } else { 3 },
            fusion,
            residual_skips: true,
            eq3_as_printed: false,
        }
    }

    /// Desk-scale profile: same topology, narrow channels, 64-pixel patches.
    pub fn tiny(fusion: Fusion) -> Self {
        Self {
            patch_size: 64,
            stage_channels: vec![8, 16, 32, 32, 32, 32],
            input_channels: if fusion == Fusion::Dmp { 6 } else { 3 },
            fusion,
            residual_skips: true,
            eq3_as_printed: false,
        }
    }

    /// Channel width every decoder stream ends with before concatenation.
    pub fn stream_width(&self) -> usize {
        self.stage_channels[0] / 4
    }

    /// Channels of a single phase patch as the encoders see it.
    pub fn phase_channels(&self) -> usize {
        if self.fusion == Fusion::Dmp {
            self.input_channels / 2
        } else {
            self.input_channels
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 6 {
            return Err(Error::config(format!(
                "expected exactly 6 stage widths, got {}",
                self.stage_channels.len()
            )));
        }
        if self.patch_size == 0 || self.patch_size % 32 != 0 {
            return Err(Error::config(format!(
                "patch size {} must be a positive multiple of 32 (five halvings)",
                self.patch_size
            )));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::config("stage widths must be positive"));
        }
        if self.stage_channels[0] % 4 != 0 {
            return Err(Error::config(format!(
                "first stage width {} must be divisible by 4 so decoder streams \
                 get an integral channel count",
                self.stage_channels[0]
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input channel count must be positive"));
        }
        if self.fusion == Fusion::Dmp && self.input_channels % 2 != 0 {
            return Err(Error::config(format!(
                "dmp stacks two phase patches, so input channels must be even, got {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    /// Widths of the six tensors entering the decoder streams.
    pub fn tap_widths(&self) -> Vec<usize> {
        let m = if self.fusion.fuses_taps() { 2 } else { 1 };
        self.stage_channels.iter().map(|&c| m * c).collect()
    }

    /// Number of trainable scalars, computed symbolically from the
    /// configuration alone. Built models assert against this.
    pub fn expected_param_count(&self) -> usize {
        let conv = |co: usize, ci: usize, k: usize| co * ci * k * k + co;
        let bn = |c: usize| 2 * c;
        let c = &self.stage_channels;
        // Each encoder consumes the full input stack under dmp and one phase
        // patch otherwise; both equal the configured input width.
        let ic = self.input_channels;

        // One phase encoder: the conv1 pair, then five pooled stages of two
        // residual units (each two 3x3 convs; 1x1 projection on width change).
        let mut enc = 0;
        enc += conv(c[0], ic, 3) + bn(c[0]);
        enc += conv(c[0], c[0], 3) + bn(c[0]);
        for k in 1..6 {
            let (p, q) = (c[k - 1], c[k]);
            enc += conv(q, p, 3) + bn(q) + conv(q, q, 3) + bn(q);
            if self.residual_skips && p != q {
                enc += conv(q, p, 1);
            }
            enc += conv(q, q, 3) + bn(q) + conv(q, q, 3) + bn(q);
        }
        let encoders = if self.fusion.uses_two_encoders() { 2 } else { 1 };

        // Phase-attention fusion holds one 3x3 conv per phase per tap level.
        let mut pa = 0;
        if self.fusion == Fusion::PaMsf {
            for &w in c.iter() {
                pa += 2 * conv(w, w, 3);
            }
        }

        // Shared decoder: one full-resolution conv stream plus five
        // upsampling chains, each halving its width down to the stream
        // width while doubling extent.
        let base = self.stream_width();
        let taps = self.tap_widths();
        let mut dec = conv(base, taps[0], 3) + bn(base);
        for level in 1..6 {
            let mut cin = taps[level];
            for i in 1..=level {
                let cout = base << (level - i);
                dec += cin * cout * 4 * 4 + cout + bn(cout);
                cin = cout;
            }
        }
        let head = conv(6 * base, 6 * base, 3) + bn(6 * base) + conv(2, 6 * base, 3);

        encoders * enc + pa + dec + head
    }
}
