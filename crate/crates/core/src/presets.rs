//! Named fixed architectures for baselines and ablations.
//!
//! "Selected" variants take their feature selection from a reference genome
//! (normally a search result) and fall back to the vanilla selection.

use crate::architecture::ModelConfig;
use crate::dataset::FeatureKind;
use crate::embedding::InputMode;
use crate::error::{Error, Result};
use crate::genome::{BlockOps, GlobalOp, Genome, LocalOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Exercise and skill into the encoder; response, elapsed and lag time
    /// into the decoder; attention then feed-forward in every block. Keeps
    /// the configured input mode.
    Vanilla,
    AllConcat,
    SelectedConcat,
    SelectedHier,
    /// `SelectedHier` with a 3-wide convolution on every local path.
    Conv3Fixed,
    SearchedConcat,
    /// Searched blocks over the vanilla inputs.
    SearchedVanillaInput,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Vanilla,
        Preset::AllConcat,
        Preset::SelectedConcat,
        Preset::SelectedHier,
        Preset::Conv3Fixed,
        Preset::SearchedConcat,
        Preset::SearchedVanillaInput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Vanilla => "vanilla",
            Preset::AllConcat => "all-concat",
            Preset::SelectedConcat => "selected-concat",
            Preset::SelectedHier => "selected-hier",
            Preset::Conv3Fixed => "conv3-fixed",
            Preset::SearchedConcat => "searched-concat",
            Preset::SearchedVanillaInput => "searched-vanilla-input",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, Preset::SearchedConcat | Preset::SearchedVanillaInput)
    }

    /// The genome and input mode of this preset under `config`.
    pub fn build(self, config: &ModelConfig, reference: Option<&Genome>) -> Result<(Genome, InputMode)> {
        if let Some(r) = reference {
            config.check_genome(r)?;
        }
        let n = config.num_features();
        let blocks = config.blocks;
        let vanilla = || -> Result<(Vec<bool>, Vec<bool>)> {
            Ok((
                mask(config, &[FeatureKind::Exercise, FeatureKind::Skill])?,
                mask(config, &[FeatureKind::Response, FeatureKind::ElapsedCont, FeatureKind::LagCont])?,
            ))
        };
        let selected = || match reference {
            Some(r) => Ok((r.encoder_inputs.clone(), r.decoder_inputs.clone())),
            None => vanilla(),
        };
        let searched = || {
            reference
                .cloned()
                .ok_or_else(|| Error::invalid("genome", format!("preset {} needs a reference genome", self.name())))
        };
        let uniform = |(enc, dec): (Vec<bool>, Vec<bool>), ops| Genome::uniform(enc, dec, blocks, ops);
        let conv3 = BlockOps::new(LocalOp::Conv3, GlobalOp::Attention, GlobalOp::Ffn);
        Ok(match self {
            Preset::Vanilla => (uniform(vanilla()?, BlockOps::GLOBAL), config.input_mode),
            Preset::AllConcat => (uniform((vec![true; n], vec![true; n]), BlockOps::GLOBAL), InputMode::Concat),
            Preset::SelectedConcat => (uniform(selected()?, BlockOps::GLOBAL), InputMode::Concat),
            Preset::SelectedHier => (uniform(selected()?, BlockOps::GLOBAL), InputMode::Hierarchical),
            Preset::Conv3Fixed => (uniform(selected()?, conv3), InputMode::Hierarchical),
            Preset::SearchedConcat => (searched()?, InputMode::Concat),
            Preset::SearchedVanillaInput => {
                let mut g = searched()?;
                (g.encoder_inputs, g.decoder_inputs) = vanilla()?;
                (g, InputMode::Concat)
            }
        })
    }
}

fn mask(config: &ModelConfig, kinds: &[FeatureKind]) -> Result<Vec<bool>> {
    for k in kinds {
        if !config.features.contains(k) {
            return Err(Error::invalid(
                "model.features",
                format!("preset needs feature {} which is not a candidate", k.short_name()),
            ));
        }
    }
    Ok(config.features.iter().map(|f| kinds.contains(f)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_selects_the_classic_inputs() {
        let config = ModelConfig::default();
        let (g, mode) = Preset::Vanilla.build(&config, None).unwrap();
        assert_eq!(mode, config.input_mode);
        let names = |bits: &[bool]| -> Vec<&str> {
            config.features.iter().zip(bits).filter(|(_, &b)| b).map(|(f, _)| f.short_name()).collect()
        };
        assert_eq!(names(&g.encoder_inputs), ["exer", "sk"]);
        assert_eq!(names(&g.decoder_inputs), ["ans", "cont_ela", "cont_lag"]);
        assert!(g.blocks().all(|b| *b == BlockOps::GLOBAL));
        assert_eq!(g.blocks_per_side(), 4);
    }

    #[test]
    fn conv3_preset_fixes_every_local_path() {
        let config = ModelConfig::default();
        let (g, mode) = Preset::Conv3Fixed.build(&config, None).unwrap();
        assert_eq!(mode, InputMode::Hierarchical);
        assert!(g.blocks().all(|b| b.local == LocalOp::Conv3 && b.global1 == GlobalOp::Attention));
    }

    #[test]
    fn selected_variants_follow_the_reference() {
        let config = ModelConfig::default();
        let mut reference = Preset::AllConcat.build(&config, None).unwrap().0;
        reference.encoder_inputs = vec![false; 12];
        reference.encoder_inputs[3] = true;
        reference.decoder_blocks[0].local = LocalOp::Conv7;
        let (b, _) = Preset::SelectedConcat.build(&config, Some(&reference)).unwrap();
        assert_eq!(b.encoder_inputs, reference.encoder_inputs);
        assert!(b.blocks().all(|x| *x == BlockOps::GLOBAL));
        let (e, mode) = Preset::SearchedConcat.build(&config, Some(&reference)).unwrap();
        assert_eq!((e, mode), (reference.clone(), InputMode::Concat));
        let (g, _) = Preset::SearchedVanillaInput.build(&config, Some(&reference)).unwrap();
        assert_eq!(g.decoder_blocks, reference.decoder_blocks);
        assert_eq!(g.encoder_inputs, Preset::Vanilla.build(&config, None).unwrap().0.encoder_inputs);
        assert!(Preset::SearchedConcat.build(&config, None).is_err());
    }

    #[test]
    fn names_round_trip_and_missing_features_error() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()), Some(p));
        }
        assert_eq!(Preset::from_name("nope"), None);
        let config = ModelConfig {
            features: vec![FeatureKind::Exercise, FeatureKind::Response],
            ..ModelConfig::default()
        };
        assert!(Preset::Vanilla.build(&config, None).unwrap_err().to_string().contains("sk"));
        assert!(Preset::AllConcat.build(&config, None).is_ok());
    }
}
