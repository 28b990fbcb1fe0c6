//! Reference implementations shared by the integration and acceptance tests.
//! Each is the most literal O(n²) reading of its definition.
#![allow(dead_code)]

use gliopath::dataio::{Codel, Grade, Idh, Sex, SlideRecord};
use gliopath::nncore::gradcheck::{grad_check_with, relative_error, GradCheckOptions};
use gliopath::nncore::{ConvGeometry, LayerSpec, Network, Tensor4};
use gliopath::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Breslow negative log partial likelihood divided by the event count.
pub fn cox_direct(risks: &[f64], times: &[f64], events: &[u8]) -> f64 {
    let n_events = events.iter().filter(|&&e| e == 1).count() as f64;
    let mut total = 0.0;
    for i in 0..risks.len() {
        if events[i] == 1 {
            let denom: f64 = (0..risks.len())
                .filter(|&j| times[j] >= times[i])
                .map(|j| risks[j].exp())
                .sum();
            total += denom.ln() - risks[i];
        }
    }
    total / n_events
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Random survival batch with repeated times and censoring; at least one event.
pub fn random_survival_batch(r: &mut impl Rng, max_n: usize) -> (Vec<f64>, Vec<f64>, Vec<u8>) {
    let n = r.random_range(1..=max_n);
    let distinct = r.random_range(1..=n);
    let pool: Vec<f64> = (0..distinct).map(|_| r.random_range(1.0..2000.0f64).round()).collect();
    let risks = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let times = (0..n).map(|_| pool[r.random_range(0..distinct)]).collect();
    let mut events: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.6))).collect();
    let k = r.random_range(0..n);
    events[k] = 1;
    (risks, times, events)
}

/// Mann–Whitney U over P·N, ties counted one half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut pairs) = (0u128, 0u128);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Harrell's c over every ordered pair: comparable when the earlier time is
/// an observed event and times differ; risk ties count one half.
pub fn c_index_pairs(risks: &[f64], times: &[f64], events: &[u8]) -> Option<f64> {
    let (mut twice, mut comparable) = (0u128, 0u128);
    for i in 0..risks.len() {
        for j in 0..risks.len() {
            if events[i] == 1 && times[i] < times[j] {
                comparable += 1;
                twice += if risks[i] > risks[j] {
                    2
                } else if risks[i] == risks[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    (comparable > 0).then(|| twice as f64 / (2 * comparable) as f64)
}

/// Median by sorting and indexing.
pub fn median_oracle(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Table-1 cells of the 663-patient TCGA cohort: (idh, codel, grade, male, female).
pub const TABLE_ONE: [(Idh, Option<Codel>, Grade, usize, usize); 8] = [
    (Idh::Wildtype, None, Grade::II, 8, 6),
    (Idh::Wildtype, None, Grade::III, 28, 29),
    (Idh::Wildtype, None, Grade::IV, 160, 102),
    (Idh::Mutant, Some(Codel::Codeleted), Grade::II, 39, 30),
    (Idh::Mutant, Some(Codel::Codeleted), Grade::III, 36, 24),
    (Idh::Mutant, Some(Codel::NonCodeleted), Grade::II, 51, 45),
    (Idh::Mutant, Some(Codel::NonCodeleted), Grade::III, 52, 36),
    (Idh::Mutant, Some(Codel::NonCodeleted), Grade::IV, 12, 5),
];

/// One record per patient following `TABLE_ONE`, with random outcomes.
pub fn table_one_records() -> Vec<SlideRecord> {
    let mut r = rng(1663);
    let mut out = Vec::new();
    for (idh, codel, grade, male, female) in TABLE_ONE {
        for k in 0..male + female {
            let i = out.len();
            out.push(SlideRecord {
                slide_id: format!("TCGA-{i:04}"),
                patient_id: format!("P-{i:04}"),
                image_path: format!("img/{i:04}.png"),
                idh: Some(idh),
                codel,
                grade,
                os_days: Some(r.random_range(30.0..4000.0f64).round()),
                event: Some(u8::from(r.random_bool(0.6))),
                sex: Some(if k < male { Sex::M } else { Sex::F }),
                age_years: Some(r.random_range(20.0..80.0f64).round()),
            });
        }
    }
    out
}

/// Spearman ρ for tie-free data: Pearson correlation of 0-based ranks.
pub fn spearman_untied(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

pub const GRAD_TOL: f64 = 1e-4;

pub fn conv(in_ch: usize, out_ch: usize, bias: bool) -> LayerSpec {
    LayerSpec::Conv {
        geometry: ConvGeometry::same3(in_ch, out_ch),
        bias,
    }
}

/// `0.5·Σ (out − target)²` against a fixed pseudo-random target, so that no
/// symmetry makes a gradient vanish.
pub fn squared_to_target(out: &Tensor4) -> Result<(f64, Tensor4)> {
    let mut r = rng(99);
    let target: Vec<f64> = (0..out.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let diff: Vec<f64> = out.data().iter().zip(&target).map(|(o, t)| o - t).collect();
    let loss = diff.iter().map(|d| 0.5 * d * d).sum();
    Ok((loss, Tensor4::from_vec(out.shape(), diff)?))
}

pub fn check(specs: Vec<LayerSpec>, input: [usize; 4], scale: f64) -> f64 {
    let [_, c, h, w] = input;
    let mut r = rng(7);
    let net = Network::init(specs, [c, h, w], &mut r).unwrap();
    let x = Tensor4::random_uniform(input, -1.0, 1.0, &mut r);
    let opts = GradCheckOptions {
        epsilon: 1e-5,
        coords_per_block: 32,
        seed: 3,
        conv_backward_scale: scale,
    };
    grad_check_with(&net, &x, &squared_to_target, &opts).unwrap().global_max
}

/// Input gradients of the parameter-free pooling layers against central
/// differences of `Σ c·y` with random weights `c`.
pub fn input_gradient_error(
    shape: [usize; 4],
    forward: impl Fn(&Tensor4) -> Tensor4,
    backward: impl Fn(&Tensor4, &Tensor4) -> Tensor4,
) -> f64 {
    let mut r = rng(11);
    let x = Tensor4::random_uniform(shape, -1.0, 1.0, &mut r);
    let y = forward(&x);
    let c: Vec<f64> = (0..y.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let dy = Tensor4::from_vec(y.shape(), c.clone()).unwrap();
    let analytic = backward(&x, &dy);
    let numeric = central_difference(
        |v| {
            let y = forward(&Tensor4::from_vec(shape, v.to_vec()).unwrap());
            y.data().iter().zip(&c).map(|(a, b)| a * b).sum()
        },
        x.data(),
        1e-5,
    );
    analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| if a == 0.0 && n.abs() < 1e-9 { 0.0 } else { relative_error(a, n) })
        .fold(0.0, f64::max)
}

