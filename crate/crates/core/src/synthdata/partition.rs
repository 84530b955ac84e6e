use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::render::{generate, SceneSpec};
use super::{BodyColor, Combo, DataError, Result, Sample, Windshield};
use crate::exec::Execution;
use crate::params::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub name: String,
    pub combos: Vec<Combo>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub image_size: usize,
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub split: SplitFractions,
    /// Explicit unseen-combination set; derived from the clients when absent.
    #[serde(default)]
    pub cross_test: Option<Vec<Combo>>,
    pub cross_test_samples: usize,
    pub domain_shift_samples: usize,
    pub seed: u64,
}

impl PartitionSpec {
    /// Two clients: blue bodies with windshields A/B, red bodies with C/D.
    pub fn cabin2(seed: u64) -> Self {
        use BodyColor::*;
        use Windshield::*;
        Self {
            image_size: 32,
            clients: vec![
                ClientSpec {
                    name: "client1".into(),
                    combos: vec![Combo::new(Blue, None), Combo::new(Blue, A), Combo::new(Blue, B)],
                    samples: 200,
                },
                ClientSpec {
                    name: "client2".into(),
                    combos: vec![Combo::new(Red, None), Combo::new(Red, C), Combo::new(Red, D)],
                    samples: 200,
                },
            ],
            split: SplitFractions::default(),
            cross_test: Option::None,
            cross_test_samples: 100,
            domain_shift_samples: 60,
            seed,
        }
    }

    /// Three clients, one error glyph each (types A, B, C) on either body
    /// color; the cross set pairs red bodies with every glyph.
    pub fn usb3(seed: u64) -> Self {
        use BodyColor::*;
        use Windshield::*;
        let client = |name: &str, glyph| ClientSpec {
            name: name.into(),
            combos: vec![Combo::new(Blue, None), Combo::new(Red, None), Combo::new(Blue, glyph)],
            samples: 200,
        };
        Self {
            image_size: 32,
            clients: vec![client("client1", A), client("client2", B), client("client3", C)],
            split: SplitFractions::default(),
            cross_test: Option::None,
            cross_test_samples: 90,
            domain_shift_samples: 60,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::SpecInvalid(m));
        if self.image_size < 8 {
            return bad(format!("image_size {} < 8", self.image_size));
        }
        let SplitFractions { train, val, test } = self.split;
        if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || (train + val + test - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split fractions {train}/{val}/{test} must be in [0,1] and sum to 1"
            ));
        }
        if self.clients.is_empty() {
            return bad("no clients".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.clients {
            if !names.insert(c.name.as_str()) {
                return bad(format!("duplicate client name `{}`", c.name));
            }
            if c.combos.is_empty() {
                return bad(format!("client `{}` has an empty combination set", c.name));
            }
            if c.samples == 0 {
                return bad(format!("client `{}` has zero samples", c.name));
            }
        }
        if let Some(cross) = &self.cross_test {
            if cross.is_empty() {
                return bad("explicit cross_test combination set is empty".into());
            }
            for combo in cross {
                if let Some(c) = self.clients.iter().find(|c| c.combos.contains(combo)) {
                    return bad(format!(
                        "cross_test combination {combo} is in client `{}`'s data",
                        c.name
                    ));
                }
            }
        }
        Ok(())
    }

    /// Combinations absent from every client: explicit list, or the product
    /// of all body colors and windshield types the clients use, minus theirs.
    pub fn cross_combos(&self) -> Vec<Combo> {
        if let Some(explicit) = &self.cross_test {
            return explicit.clone();
        }
        let seen: BTreeSet<Combo> = self.clients.iter().flat_map(|c| c.combos.iter().copied()).collect();
        let bodies: BTreeSet<BodyColor> = seen.iter().map(|c| c.body).collect();
        let types: BTreeSet<Windshield> = seen
            .iter()
            .map(|c| c.windshield)
            .filter(|w| *w != Windshield::None)
            .collect();
        bodies
            .iter()
            .flat_map(|&b| types.iter().map(move |&w| Combo::new(b, w)))
            .filter(|c| !seen.contains(c))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub name: String,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partitions {
    pub clients: Vec<ClientDataset>,
    pub cross_test: Vec<Sample>,
    pub cross_test_combos: Vec<Combo>,
    /// Set when no combination is unseen by all clients.
    pub cross_test_empty: bool,
    pub domain_shift: Vec<Sample>,
}

/// Split sizes by flooring each fraction, then handing the remainder to the
/// largest fractional parts (ties to the earlier split).
pub fn split_counts(n: usize, fractions: &SplitFractions) -> [usize; 3] {
    let fr = [fractions.train, fractions.val, fractions.test];
    let exact = fr.map(|f| f * n as f64);
    // tolerate representation error such as 0.7 * 200 = 139.99999999999997
    let mut counts = exact.map(|e| (e + 1e-9).floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

const CROSS_STREAM: u64 = 1_000;
const SHIFT_STREAM: u64 = 1_001;
const SHUFFLE_STREAM: u64 = 5_000;

/// `n` samples cycling through `combos`; sample `j` is rendered from its own
/// seed `derive_seed(set_seed, j)`, so generation order does not matter.
fn generate_set(
    n: usize,
    combos: &[Combo],
    set_seed: u64,
    scene: impl Fn(Combo) -> SceneSpec + Sync + Send,
    exec: Execution,
) -> Vec<Sample> {
    exec.map_range(n, |j| {
        let combo = combos[j % combos.len()];
        let mut rng = Rng::new(Rng::derive_seed(set_seed, j as u64));
        generate(&scene(combo), &mut rng)
    })
}

pub fn build_partitions(spec: &PartitionSpec) -> Result<Partitions> {
    build_partitions_with(spec, Execution::default())
}

pub fn build_partitions_with(spec: &PartitionSpec, exec: Execution) -> Result<Partitions> {
    spec.validate()?;
    let size = spec.image_size;
    let mut clients = Vec::with_capacity(spec.clients.len());
    for (ci, c) in spec.clients.iter().enumerate() {
        let set_seed = Rng::derive_seed(spec.seed, ci as u64);
        let mut samples = generate_set(
            c.samples,
            &c.combos,
            set_seed,
            |k| SceneSpec::standard(size, k.body, k.windshield),
            exec,
        );
        Rng::new(Rng::derive_seed(set_seed, SHUFFLE_STREAM)).shuffle(&mut samples);
        let [n_train, n_val, _] = split_counts(samples.len(), &spec.split);
        let test = samples.split_off(n_train + n_val);
        let val = samples.split_off(n_train);
        clients.push(ClientDataset {
            name: c.name.clone(),
            train: samples,
            val,
            test,
        });
    }

    let cross_combos = spec.cross_combos();
    let cross_test = if cross_combos.is_empty() {
        log::warn!("cross_test is empty: every combination appears in some client's data");
        Vec::new()
    } else {
        generate_set(
            spec.cross_test_samples,
            &cross_combos,
            Rng::derive_seed(spec.seed, CROSS_STREAM),
            |k| SceneSpec::standard(size, k.body, k.windshield),
            exec,
        )
    };

    let mut all: BTreeSet<Combo> = spec.clients.iter().flat_map(|c| c.combos.iter().copied()).collect();
    all.extend(cross_combos.iter().copied());
    let all: Vec<Combo> = all.into_iter().collect();
    let domain_shift = generate_set(
        spec.domain_shift_samples,
        &all,
        Rng::derive_seed(spec.seed, SHIFT_STREAM),
        |k| SceneSpec::domain_shift(size, k.body, k.windshield),
        exec,
    );

    Ok(Partitions {
        clients,
        cross_test_empty: cross_combos.is_empty(),
        cross_test,
        cross_test_combos: cross_combos,
        domain_shift,
    })
}
