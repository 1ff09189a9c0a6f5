//! Model hyper-parameters and named presets.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttnKind, MessageKind};
use crate::error::{Error, Result};
use crate::graph::{RadialBasis, RadialKind};
use crate::irreps::{GatePlan, Irreps, LinearPlan};
use crate::so3::sh_parity;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Se3,
    E3,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se3" => Ok(Mode::Se3),
            "e3" => Ok(Mode::E3),
            _ => Err(Error::Config(format!("unknown mode `{s}` (se3|e3)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub mode: Mode,
    pub block_count: usize,
    pub d_embed: Irreps,
    pub d_sh: Irreps,
    pub d_head: Irreps,
    pub d_ffn: Irreps,
    pub d_feature: Irreps,
    pub heads: usize,
    pub l_max: u32,
    pub attn_kind: AttnKind,
    pub message_kind: MessageKind,
    pub leaky_slope: f64,
    pub attn_dropout: f64,
    pub radial_kind: RadialKind,
    pub basis_count: usize,
    pub cutoff: f64,
    pub radial_hidden: usize,
    pub avg_degree: f64,
    pub avg_atom_count: f64,
    pub species_count: usize,
}

fn p(s: &str) -> Irreps {
    s.parse().expect("preset irreps literal")
}

impl ModelConfig {
    /// QM9 architecture; E(3) mode swaps in the parity layouts.
    pub fn qm9(mode: Mode) -> Self {
        let (d_embed, d_sh, d_head, d_ffn, d_feature) = match mode {
            Mode::Se3 => (
                p("[(128,0),(64,1),(32,2)]"),
                p("[(1,0),(1,1),(1,2)]"),
                p("[(32,0),(16,1),(8,2)]"),
                p("[(384,0),(192,1),(96,2)]"),
                p("[(512,0)]"),
            ),
            Mode::E3 => (
                p("[(128,0,e),(32,0,o),(32,1,e),(32,1,o),(16,2,e),(16,2,o)]"),
                p("[(1,0,e),(1,1,o),(1,2,e)]"),
                p("[(32,0,e),(8,0,o),(8,1,e),(8,1,o),(4,2,e),(4,2,o)]"),
                p("[(384,0,e),(96,0,o),(96,1,e),(96,1,o),(48,2,e),(48,2,o)]"),
                p("[(512,0,e)]"),
            ),
        };
        Self {
            name: "qm9".into(),
            mode,
            block_count: 6,
            d_embed,
            d_sh,
            d_head,
            d_ffn,
            d_feature,
            heads: 4,
            l_max: 2,
            attn_kind: AttnKind::Mlp,
            message_kind: MessageKind::Nonlinear,
            leaky_slope: 0.2,
            attn_dropout: 0.0,
            radial_kind: RadialKind::Gaussian,
            basis_count: 128,
            cutoff: 5.0,
            radial_hidden: 64,
            avg_degree: 15.57930850982666,
            avg_atom_count: 18.03065905448718,
            species_count: 10,
        }
    }

    /// MD17 architecture at `L_max = 2`.
    pub fn md17() -> Self {
        Self {
            name: "md17".into(),
            radial_kind: RadialKind::Bessel,
            basis_count: 32,
            avg_degree: 15.0,
            avg_atom_count: 15.0,
            ..Self::qm9(Mode::Se3)
        }
    }

    /// OC20 architecture (no periodic images).
    pub fn oc20(mode: Mode) -> Self {
        let (d_embed, d_sh, d_head, d_ffn, d_feature) = match mode {
            Mode::Se3 => (
                p("[(256,0),(128,1)]"),
                p("[(1,0),(1,1)]"),
                p("[(32,0),(16,1)]"),
                p("[(768,0),(384,1)]"),
                p("[(512,0)]"),
            ),
            Mode::E3 => (
                p("[(256,0,e),(64,0,o),(64,1,e),(64,1,o)]"),
                p("[(1,0,e),(1,1,o)]"),
                p("[(32,0,e),(8,0,o),(8,1,e),(8,1,o)]"),
                p("[(768,0,e),(192,0,o),(192,1,e),(192,1,o)]"),
                p("[(512,0,e)]"),
            ),
        };
        Self {
            name: "oc20".into(),
            mode,
            block_count: 6,
            d_embed,
            d_sh,
            d_head,
            d_ffn,
            d_feature,
            heads: 8,
            l_max: 1,
            attn_kind: AttnKind::Mlp,
            message_kind: MessageKind::Nonlinear,
            leaky_slope: 0.2,
            attn_dropout: 0.2,
            radial_kind: RadialKind::Gaussian,
            basis_count: 128,
            cutoff: 5.0,
            radial_hidden: 64,
            avg_degree: 23.395238876342773,
            avg_atom_count: 77.81317,
            species_count: 100,
        }
    }

    /// Desk-scale model: 2 blocks, `L_max = 1`.
    pub fn toy(mode: Mode, attn_kind: AttnKind, message_kind: MessageKind) -> Self {
        let (d_embed, d_sh, d_head, d_ffn, d_feature) = match mode {
            Mode::Se3 => (
                p("[(16,0),(8,1)]"),
                p("[(1,0),(1,1)]"),
                p("[(8,0),(4,1)]"),
                p("[(32,0),(16,1)]"),
                p("[(16,0)]"),
            ),
            Mode::E3 => (
                p("[(16,0,e),(4,0,o),(4,1,e),(8,1,o)]"),
                p("[(1,0,e),(1,1,o)]"),
                p("[(8,0,e),(2,0,o),(2,1,e),(4,1,o)]"),
                p("[(32,0,e),(8,0,o),(8,1,e),(16,1,o)]"),
                p("[(16,0,e)]"),
            ),
        };
        Self {
            name: "toy".into(),
            mode,
            block_count: 2,
            d_embed,
            d_sh,
            d_head,
            d_ffn,
            d_feature,
            heads: 2,
            l_max: 1,
            attn_kind,
            message_kind,
            leaky_slope: 0.2,
            attn_dropout: 0.0,
            radial_kind: RadialKind::Gaussian,
            basis_count: 8,
            cutoff: 5.0,
            radial_hidden: 16,
            avg_degree: 4.0,
            avg_atom_count: 5.0,
            species_count: 10,
        }
    }

    pub fn preset(name: &str, mode: Mode) -> Result<Self> {
        match name {
            "qm9" => Ok(Self::qm9(mode)),
            "md17" if mode == Mode::Se3 => Ok(Self::md17()),
            "md17" => Ok(Self {
                mode,
                ..Self::qm9(mode)
            }
            .with_name("md17")
            .with_radial(RadialKind::Bessel, 32)),
            "oc20" => Ok(Self::oc20(mode)),
            "toy" => Ok(Self::toy(mode, AttnKind::Mlp, MessageKind::Nonlinear)),
            _ => Err(Error::Config(format!("unknown preset `{name}` (qm9|md17|oc20|toy)"))),
        }
    }

    fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    fn with_radial(mut self, kind: RadialKind, count: usize) -> Self {
        self.radial_kind = kind;
        self.basis_count = count;
        self
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            heads: self.heads,
            d_head: self.d_head.clone(),
            attn_kind: self.attn_kind,
            message_kind: self.message_kind,
            leaky_slope: self.leaky_slope,
            attn_dropout: self.attn_dropout,
        }
    }

    pub fn radial_basis(&self) -> RadialBasis {
        RadialBasis {
            kind: self.radial_kind,
            count: self.basis_count,
            cutoff: self.cutoff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e3 = self.mode == Mode::E3;
        for (label, ir) in [
            ("d_embed", &self.d_embed),
            ("d_sh", &self.d_sh),
            ("d_head", &self.d_head),
            ("d_ffn", &self.d_ffn),
            ("d_feature", &self.d_feature),
        ] {
            if ir.is_empty() {
                return Err(Error::Config(format!("{label} is empty")));
            }
            if ir.is_e3() != e3 {
                return Err(Error::Config(format!(
                    "{label} {ir} does not match mode {:?}",
                    self.mode
                )));
            }
            if ir.lmax() > self.l_max {
                return Err(Error::Config(format!("{label} {ir} exceeds L_max {}", self.l_max)));
            }
        }
        for (l, b) in self.d_sh.blocks().iter().enumerate() {
            if b.mul != 1 || b.ir.l != l as u32 || b.ir.parity.is_some_and(|q| q != sh_parity(b.ir.l)) {
                return Err(Error::Config(format!("d_sh {} must be [(1,0),(1,1),…]", self.d_sh)));
            }
        }
        if !self.d_embed.blocks()[0].ir.is_scalar() {
            return Err(Error::Config(format!("d_embed {} must start with scalars", self.d_embed)));
        }
        if self.d_feature.scalar_channels() == 0 {
            return Err(Error::Config("d_feature needs scalar channels for the energy head".into()));
        }
        if self.block_count == 0 || self.species_count == 0 || self.basis_count == 0 {
            return Err(Error::Config("block, species and basis counts must be positive".into()));
        }
        if !(self.cutoff > 0.0) || !(self.avg_degree > 0.0) || !(self.avg_atom_count > 0.0) {
            return Err(Error::Config("cutoff and averages must be positive".into()));
        }
        self.attention().validate()?;
        let value = self.attention().value_irreps();
        crate::attention::head_columns(&value, self.heads)?;
        // every linear map must find a source of each output kind
        LinearPlan::new(&value, &self.d_embed, false)?;
        GatePlan::for_output(&self.d_ffn)?;
        GatePlan::for_output(&self.d_feature)?;
        LinearPlan::new(&self.d_embed, &GatePlan::for_output(&self.d_ffn)?.irreps_in, true)?;
        LinearPlan::new(&self.d_ffn, &self.d_embed, true)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for mode in [Mode::Se3, Mode::E3] {
            for name in ["qm9", "md17", "oc20", "toy"] {
                ModelConfig::preset(name, mode).unwrap().validate().unwrap();
            }
        }
    }

    #[test]
    fn qm9_preset_values() {
        let c = ModelConfig::qm9(Mode::Se3);
        assert_eq!(c.d_embed.to_string(), "[(128,0),(64,1),(32,2)]");
        assert_eq!(c.block_count, 6);
        assert_eq!(c.heads, 4);
        assert_eq!(c.attention().value_irreps(), c.d_embed);
    }

    #[test]
    fn mode_mismatch_is_a_config_error() {
        let mut c = ModelConfig::qm9(Mode::Se3);
        c.mode = Mode::E3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_heads_rejected() {
        let mut c = ModelConfig::toy(Mode::Se3, AttnKind::Mlp, MessageKind::Linear);
        c.heads = 0;
        assert!(c.validate().is_err());
    }
}
