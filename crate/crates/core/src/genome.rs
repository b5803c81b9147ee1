//! Architecture encoding and the shrinking per-gene search space.
//!
//! A genome is the flat integer vector
//! `[b_En (Num bits), b_De (Num bits), (lo, go1, go2) × N encoder blocks, (lo, go1, go2) × N decoder blocks]`
//! of length `2·Num + 6·N`.

use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Local-path operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LocalOp {
    Zero = 0,
    Conv3 = 1,
    Conv5 = 2,
    Conv7 = 3,
    Conv11 = 4,
}

impl LocalOp {
    pub const ALL: [LocalOp; 5] = [LocalOp::Zero, LocalOp::Conv3, LocalOp::Conv5, LocalOp::Conv7, LocalOp::Conv11];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn kernel(self) -> Option<usize> {
        match self {
            LocalOp::Zero => None,
            LocalOp::Conv3 => Some(3),
            LocalOp::Conv5 => Some(5),
            LocalOp::Conv7 => Some(7),
            LocalOp::Conv11 => Some(11),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LocalOp::Zero => "zero",
            LocalOp::Conv3 => "conv3",
            LocalOp::Conv5 => "conv5",
            LocalOp::Conv7 => "conv7",
            LocalOp::Conv11 => "conv11",
        }
    }
}

/// Global-path operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GlobalOp {
    Zero = 0,
    Ffn = 1,
    Attention = 2,
}

impl GlobalOp {
    pub const ALL: [GlobalOp; 3] = [GlobalOp::Zero, GlobalOp::Ffn, GlobalOp::Attention];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            GlobalOp::Zero => "zero",
            GlobalOp::Ffn => "FFN",
            GlobalOp::Attention => "MHSA",
        }
    }
}

/// The `(lo, go1, go2)` triplet of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockOps {
    pub local: LocalOp,
    pub global1: GlobalOp,
    pub global2: GlobalOp,
}

impl BlockOps {
    pub const fn new(local: LocalOp, global1: GlobalOp, global2: GlobalOp) -> Self {
        Self { local, global1, global2 }
    }

    /// `(0, 2, 1)`: attention then feed-forward, no local path.
    pub const GLOBAL: BlockOps = BlockOps::new(LocalOp::Zero, GlobalOp::Attention, GlobalOp::Ffn);
    /// `(1, 0, 0)`: smallest convolution only.
    pub const LOCAL: BlockOps = BlockOps::new(LocalOp::Conv3, GlobalOp::Zero, GlobalOp::Zero);

    fn codes(self) -> [u8; 3] {
        [self.local.code(), self.global1.code(), self.global2.code()]
    }
}

impl fmt::Display for BlockOps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.local.name(), self.global1.name(), self.global2.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Genome {
    pub encoder_inputs: Vec<bool>,
    pub decoder_inputs: Vec<bool>,
    pub encoder_blocks: Vec<BlockOps>,
    pub decoder_blocks: Vec<BlockOps>,
}

impl Genome {
    /// Every block on both sides uses `ops`.
    pub fn uniform(encoder_inputs: Vec<bool>, decoder_inputs: Vec<bool>, blocks: usize, ops: BlockOps) -> Self {
        Self {
            encoder_inputs,
            decoder_inputs,
            encoder_blocks: vec![ops; blocks],
            decoder_blocks: vec![ops; blocks],
        }
    }

    pub fn num_features(&self) -> usize {
        self.encoder_inputs.len()
    }

    pub fn blocks_per_side(&self) -> usize {
        self.encoder_blocks.len()
    }

    pub fn gene_count(&self) -> usize {
        2 * self.num_features() + 6 * self.blocks_per_side()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BlockOps> {
        self.encoder_blocks.iter().chain(&self.decoder_blocks)
    }

    /// Checks the selection constraints and matching side lengths.
    pub fn validate(&self) -> Result<()> {
        if self.encoder_inputs.len() != self.decoder_inputs.len() {
            return Err(Error::Genome("selection vectors differ in length".into()));
        }
        if self.encoder_blocks.len() != self.decoder_blocks.len() {
            return Err(Error::Genome("encoder and decoder block counts differ".into()));
        }
        if !self.encoder_inputs.contains(&true) {
            return Err(Error::Genome("encoder selects no input feature".into()));
        }
        if !self.decoder_inputs.contains(&true) {
            return Err(Error::Genome("decoder selects no input feature".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self
            .encoder_inputs
            .iter()
            .chain(&self.decoder_inputs)
            .map(|&b| b as u8)
            .collect();
        for block in self.blocks() {
            v.extend(block.codes());
        }
        v
    }

    /// Decodes a flat vector; `N` is inferred from the length.
    pub fn decode(codes: &[i64], num_features: usize) -> Result<Self> {
        let len = codes.len();
        if num_features == 0 || len < 2 * num_features || (len - 2 * num_features) % 6 != 0 {
            return Err(Error::Genome(format!(
                "length {len} is not 2·{num_features} + 6·N for any N"
            )));
        }
        let blocks = (len - 2 * num_features) / 6;
        let bit = |i: usize| -> Result<bool> {
            match codes[i] {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(Error::Genome(format!("gene {i}: selection bit must be 0 or 1, got {v}"))),
            }
        };
        let code = |i: usize, max: i64| -> Result<u8> {
            let v = codes[i];
            if (0..=max).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Genome(format!("gene {i}: value {v} outside 0..={max}")))
            }
        };
        let encoder_inputs = (0..num_features).map(bit).collect::<Result<Vec<_>>>()?;
        let decoder_inputs = (num_features..2 * num_features).map(bit).collect::<Result<Vec<_>>>()?;
        let mut all_blocks = Vec::with_capacity(2 * blocks);
        for b in 0..2 * blocks {
            let at = 2 * num_features + 3 * b;
            all_blocks.push(BlockOps {
                local: LocalOp::from_code(code(at, 4)?).unwrap(),
                global1: GlobalOp::from_code(code(at + 1, 2)?).unwrap(),
                global2: GlobalOp::from_code(code(at + 2, 2)?).unwrap(),
            });
        }
        let decoder_blocks = all_blocks.split_off(blocks);
        let genome = Genome {
            encoder_inputs,
            decoder_inputs,
            encoder_blocks: all_blocks,
            decoder_blocks,
        };
        genome.validate()?;
        Ok(genome)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.encode()).expect("integers serialise")
    }

    pub fn from_json(text: &str, num_features: usize) -> Result<Self> {
        let codes: Vec<i64> = serde_json::from_str(text)?;
        Self::decode(&codes, num_features)
    }

    /// Multi-line human-readable description.
    pub fn describe(&self) -> String {
        let bits = |v: &[bool]| {
            v.iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| (i + 1).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = format!(
            "encoder inputs: {{{}}}\ndecoder inputs: {{{}}}\n",
            bits(&self.encoder_inputs),
            bits(&self.decoder_inputs)
        );
        for (i, b) in self.encoder_blocks.iter().enumerate() {
            s.push_str(&format!("encoder block {i}: {b}\n"));
        }
        for (i, b) in self.decoder_blocks.iter().enumerate() {
            s.push_str(&format!("decoder block {i}: {b}\n"));
        }
        s
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

/// What a gene position controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneKind {
    EncoderInput(usize),
    DecoderInput(usize),
    Local,
    Global1,
    Global2,
}

/// Set of admissible codes for one gene, as a bitmask over `0..8`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GeneSet(u8);

impl GeneSet {
    pub fn full(size: u8) -> Self {
        GeneSet(((1u16 << size) - 1) as u8)
    }

    pub fn from_codes(codes: &[u8]) -> Self {
        GeneSet(codes.iter().fold(0, |m, &c| m | (1 << c)))
    }

    pub fn contains(self, code: u8) -> bool {
        code < 8 && self.0 & (1 << code) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn codes(self) -> impl Iterator<Item = u8> {
        (0..8u8).filter(move |&c| self.contains(c))
    }

    pub fn without(self, code: u8) -> Self {
        GeneSet(self.0 & !(1 << code))
    }

    fn pick<R: Rng + ?Sized>(self, rng: &mut R) -> u8 {
        let n = self.len();
        self.codes().nth(rng.random_range(0..n)).expect("non-empty gene set")
    }
}

/// Per-gene admissible values, aligned with [`Genome::encode`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchSpace {
    num_features: usize,
    blocks: usize,
    genes: Vec<GeneSet>,
}

/// Tries allowed when sampling under a parameter budget.
pub const BUDGET_TRIES: usize = 100;

impl SearchSpace {
    /// The unreduced space: `{0,1}` per selection bit, `{0..4}` per local gene
    /// and `{0,1,2}` per global gene.
    pub fn initial(num_features: usize, blocks: usize) -> Self {
        let mut genes = vec![GeneSet::full(2); 2 * num_features];
        for _ in 0..2 * blocks {
            genes.extend([GeneSet::full(5), GeneSet::full(3), GeneSet::full(3)]);
        }
        Self {
            num_features,
            blocks,
            genes,
        }
    }

    pub fn from_genes(num_features: usize, blocks: usize, genes: Vec<GeneSet>) -> Result<Self> {
        if genes.len() != 2 * num_features + 6 * blocks {
            return Err(Error::Genome("gene set count does not match the layout".into()));
        }
        let space = Self {
            num_features,
            blocks,
            genes,
        };
        for (i, g) in space.genes.iter().enumerate() {
            let limit = match space.kind(i) {
                GeneKind::EncoderInput(_) | GeneKind::DecoderInput(_) => 2,
                GeneKind::Local => 5,
                GeneKind::Global1 | GeneKind::Global2 => 3,
            };
            if g.is_empty() || g.codes().any(|c| c >= limit) {
                return Err(Error::Genome(format!("gene {i}: invalid admissible set")));
            }
        }
        if !space.side_can_select(0) || !space.side_can_select(1) {
            return Err(Error::Genome("a selection vector cannot select any feature".into()));
        }
        Ok(space)
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn gene(&self, pos: usize) -> GeneSet {
        self.genes[pos]
    }

    pub fn genes(&self) -> &[GeneSet] {
        &self.genes
    }

    pub fn kind(&self, pos: usize) -> GeneKind {
        let n = self.num_features;
        if pos < n {
            GeneKind::EncoderInput(pos)
        } else if pos < 2 * n {
            GeneKind::DecoderInput(pos - n)
        } else {
            match (pos - 2 * n) % 3 {
                0 => GeneKind::Local,
                1 => GeneKind::Global1,
                _ => GeneKind::Global2,
            }
        }
    }

    fn side_range(&self, side: usize) -> std::ops::Range<usize> {
        side * self.num_features..(side + 1) * self.num_features
    }

    fn side_can_select(&self, side: usize) -> bool {
        self.side_range(side).any(|i| self.genes[i].contains(1))
    }

    /// Whether removing `code` from gene `pos` keeps the space non-degenerate:
    /// the set stays non-empty and its selection vector can still pick a feature.
    pub fn can_remove(&self, pos: usize, code: u8) -> bool {
        let g = self.genes[pos];
        if !g.contains(code) || g.len() < 2 {
            return false;
        }
        match self.kind(pos) {
            GeneKind::EncoderInput(_) | GeneKind::DecoderInput(_) if code == 1 => {
                let side = pos / self.num_features;
                self.side_range(side).filter(|&i| i != pos).any(|i| self.genes[i].contains(1))
            }
            _ => true,
        }
    }

    /// Removes `code` from gene `pos` when [`can_remove`](Self::can_remove) allows it.
    pub fn remove(&mut self, pos: usize, code: u8) -> bool {
        if self.can_remove(pos, code) {
            self.genes[pos] = self.genes[pos].without(code);
            true
        } else {
            false
        }
    }

    pub fn admits(&self, genome: &Genome) -> bool {
        let codes = genome.encode();
        codes.len() == self.genes.len() && codes.iter().zip(&self.genes).all(|(&c, g)| g.contains(c))
    }

    /// Number of constraint-satisfying genomes: for each selection vector the
    /// product of its set sizes minus the all-zero assignment (when admissible),
    /// times the product of all operation-gene set sizes.
    pub fn size(&self) -> BigUint {
        let mut total = BigUint::from(1u32);
        for side in 0..2 {
            let range = self.side_range(side);
            let product: BigUint = range.clone().map(|i| BigUint::from(self.genes[i].len())).product();
            let all_zero = range.clone().all(|i| self.genes[i].contains(0));
            total *= if all_zero { product - 1u32 } else { product };
        }
        for g in &self.genes[2 * self.num_features..] {
            total *= BigUint::from(g.len());
        }
        total
    }

    /// Forces one uniformly chosen selectable bit on when a side is all-zero.
    pub fn repair<R: Rng + ?Sized>(&self, genome: &mut Genome, rng: &mut R) {
        for side in 0..2 {
            let bits = if side == 0 {
                &mut genome.encoder_inputs
            } else {
                &mut genome.decoder_inputs
            };
            if bits.contains(&true) {
                continue;
            }
            let candidates: Vec<usize> = (0..self.num_features)
                .filter(|&i| self.genes[side * self.num_features + i].contains(1))
                .collect();
            let pick = candidates[rng.random_range(0..candidates.len())];
            bits[pick] = true;
        }
    }

    /// Rebuilds a genome from codes that all lie inside this space.
    pub fn genome_from_codes(&self, codes: &[u8]) -> Genome {
        let wide: Vec<i64> = codes.iter().map(|&c| c as i64).collect();
        let n = self.num_features;
        let blocks = self.blocks;
        let bits = |r: std::ops::Range<usize>| r.map(|i| codes[i] == 1).collect::<Vec<_>>();
        let block = |b: usize| {
            let at = 2 * n + 3 * b;
            BlockOps {
                local: LocalOp::from_code(wide[at] as u8).expect("in space"),
                global1: GlobalOp::from_code(wide[at + 1] as u8).expect("in space"),
                global2: GlobalOp::from_code(wide[at + 2] as u8).expect("in space"),
            }
        };
        Genome {
            encoder_inputs: bits(0..n),
            decoder_inputs: bits(n..2 * n),
            encoder_blocks: (0..blocks).map(block).collect(),
            decoder_blocks: (blocks..2 * blocks).map(block).collect(),
        }
    }

    /// Uniform draw of every gene from its admissible set, then selection repair.
    pub fn sample_unconstrained<R: Rng + ?Sized>(&self, rng: &mut R) -> Genome {
        let codes: Vec<u8> = self.genes.iter().map(|g| g.pick(rng)).collect();
        let mut genome = self.genome_from_codes(&codes);
        self.repair(&mut genome, rng);
        genome
    }

    /// Samples a genome, rejection-resampling until `param_count` fits the budget.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        budget: Option<(u64, &dyn Fn(&Genome) -> u64)>,
    ) -> Result<Genome> {
        match budget {
            None => Ok(self.sample_unconstrained(rng)),
            Some((limit, count)) => {
                for _ in 0..BUDGET_TRIES {
                    let g = self.sample_unconstrained(rng);
                    if count(&g) <= limit {
                        return Ok(g);
                    }
                }
                Err(Error::BudgetUnsatisfiable {
                    budget: limit,
                    tries: BUDGET_TRIES,
                })
            }
        }
    }

    /// Pretty list of the admissible codes per gene.
    pub fn describe(&self) -> String {
        self.genes
            .iter()
            .map(|g| format!("{{{}}}", g.codes().map(|c| c.to_string()).collect::<Vec<_>>().join(",")))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FIG4: [i64; 22] = [1, 1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 0, 1, 2, 0, 1, 0, 2, 1, 4, 2, 2];

    #[test]
    fn decodes_the_illustrated_architecture() {
        let g = Genome::decode(&FIG4, 5).unwrap();
        assert_eq!(g.encoder_inputs, vec![true, true, false, false, false]);
        assert_eq!(g.decoder_inputs, vec![false, false, true, false, true]);
        use GlobalOp::*;
        use LocalOp::*;
        assert_eq!(
            g.encoder_blocks,
            vec![BlockOps::new(Conv3, GlobalOp::Zero, Ffn), BlockOps::new(Conv5, GlobalOp::Zero, Ffn)]
        );
        assert_eq!(
            g.decoder_blocks,
            vec![BlockOps::new(LocalOp::Zero, Attention, Ffn), BlockOps::new(Conv11, Attention, Attention)]
        );
        let back: Vec<i64> = g.encode().iter().map(|&c| c as i64).collect();
        assert_eq!(back, FIG4);
    }

    #[test]
    fn decode_rejects_bad_vectors() {
        let mut bad = FIG4;
        bad[10] = 7;
        assert!(Genome::decode(&bad, 5).unwrap_err().to_string().contains("outside"));
        assert!(Genome::decode(&FIG4[..21], 5).is_err());
        let mut no_enc = FIG4;
        no_enc[0] = 0;
        no_enc[1] = 0;
        assert!(Genome::decode(&no_enc, 5).is_err());
        let mut bit2 = FIG4;
        bit2[3] = 2;
        assert!(Genome::decode(&bit2, 5).is_err());
    }

    #[test]
    fn json_literal_round_trip() {
        let g = Genome::decode(&FIG4, 5).unwrap();
        let text = g.to_json();
        assert_eq!(text, "[1,1,0,0,0,0,0,1,0,1,1,0,1,2,0,1,0,2,1,4,2,2]");
        assert_eq!(Genome::from_json(&text, 5).unwrap(), g);
    }

    /// Counts constraint-satisfying genomes by walking every code vector.
    fn enumerate(space: &SearchSpace) -> u64 {
        let limits: Vec<u8> = (0..space.len())
            .map(|i| match space.kind(i) {
                GeneKind::EncoderInput(_) | GeneKind::DecoderInput(_) => 2,
                GeneKind::Local => 5,
                _ => 3,
            })
            .collect();
        let mut codes = vec![0u8; space.len()];
        let mut count = 0;
        'outer: loop {
            let admitted = codes.iter().zip(space.genes()).all(|(&c, g)| g.contains(c));
            let n = space.num_features();
            if admitted && codes[..n].contains(&1) && codes[n..2 * n].contains(&1) {
                count += 1;
            }
            for i in 0..codes.len() {
                codes[i] += 1;
                if codes[i] < limits[i] {
                    continue 'outer;
                }
                codes[i] = 0;
            }
            break;
        }
        count
    }

    #[test]
    fn size_matches_enumeration_for_small_spaces() {
        let full = SearchSpace::initial(3, 1);
        assert_eq!(enumerate(&full), 99_225);
        assert_eq!(full.size(), BigUint::from(99_225u32));

        let mut reduced = full.clone();
        assert!(reduced.remove(0, 0));
        assert!(reduced.remove(6, 4));
        assert!(reduced.remove(7, 2));
        assert!(reduced.remove(4, 1));
        assert_eq!(reduced.size(), BigUint::from(enumerate(&reduced)));

        let two = SearchSpace::initial(2, 1);
        assert_eq!(two.size(), BigUint::from(enumerate(&two)));
    }

    #[test]
    fn singleton_space_has_one_genome() {
        let g = Genome::decode(&FIG4, 5).unwrap();
        let genes = g.encode().iter().map(|&c| GeneSet::from_codes(&[c])).collect();
        let space = SearchSpace::from_genes(5, 2, genes).unwrap();
        assert_eq!(space.size(), BigUint::from(1u32));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            assert_eq!(space.sample(&mut rng, None).unwrap(), g);
        }
    }

    #[test]
    fn full_scale_size_is_big() {
        let space = SearchSpace::initial(12, 4);
        let expected = BigUint::from(4095u32).pow(2) * BigUint::from(45u32).pow(8);
        assert_eq!(space.size(), expected);
    }

    #[test]
    fn sampled_selections_are_never_empty() {
        let space = SearchSpace::initial(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let g = space.sample(&mut rng, None).unwrap();
            assert!(g.validate().is_ok());
        }
    }

    #[test]
    fn budget_below_minimum_is_an_error() {
        let space = SearchSpace::initial(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // count = number of active ops; the minimum achievable is 0
        let count = |g: &Genome| -> u64 {
            g.blocks()
                .map(|b| (b.local != LocalOp::Zero) as u64 + (b.global1 != GlobalOp::Zero) as u64 + (b.global2 != GlobalOp::Zero) as u64)
                .sum::<u64>()
                + 10
        };
        match space.sample(&mut rng, Some((9, &count))) {
            Err(Error::BudgetUnsatisfiable { budget, tries }) => {
                assert_eq!(budget, 9);
                assert_eq!(tries, BUDGET_TRIES);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(space.sample(&mut rng, Some((13, &count))).is_ok());
    }

    #[test]
    fn last_selectable_bit_cannot_be_removed() {
        let mut space = SearchSpace::initial(2, 1);
        assert!(space.remove(0, 1));
        assert!(!space.can_remove(1, 1));
        assert!(space.remove(1, 0));
        assert!(!space.remove(1, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let g = space.sample(&mut rng, None).unwrap();
            assert_eq!(g.encoder_inputs, vec![false, true]);
        }
    }

    fn arb_genome() -> impl Strategy<Value = Genome> {
        (1usize..8, 1usize..5, any::<u64>()).prop_map(|(n, blocks, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            SearchSpace::initial(n, blocks).sample(&mut rng, None).unwrap()
        })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(g in arb_genome()) {
            let codes: Vec<i64> = g.encode().iter().map(|&c| c as i64).collect();
            prop_assert_eq!(codes.len(), g.gene_count());
            prop_assert_eq!(Genome::decode(&codes, g.num_features()).unwrap(), g);
        }

        #[test]
        fn samples_respect_reduced_space(seed in any::<u64>(), removals in proptest::collection::vec((0usize..30, 0u8..5), 0..40)) {
            let mut space = SearchSpace::initial(4, 2);
            for (pos, code) in removals {
                let pos = pos % space.len();
                space.remove(pos, code);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let g = space.sample(&mut rng, None).unwrap();
                prop_assert!(space.admits(&g));
                prop_assert!(g.validate().is_ok());
            }
        }
    }
}
