#![allow(dead_code)]

use asymgame::game_model::GameSpec;

pub fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Symmetric unit-rate chain, `g ≡ 0.5`.
pub fn trivial() -> GameSpec {
    let sym = vec![vec![-1.0, 1.0], vec![1.0, -1.0]];
    GameSpec::uniform_rates(2, 2, sym, vec![vec![vec![0.5; 2]; 2]; 2], 1.0).unwrap()
}

/// `R ≡ 0`, singleton actions, `g = (0.2, 0.9)`.
pub fn static_game() -> GameSpec {
    static_with(&[0.2, 0.9])
}

pub fn static_with(g: &[f64]) -> GameSpec {
    let k = g.len();
    GameSpec::uniform_rates(1, 1, vec![vec![0.0; k]; k], g.iter().map(|&x| vec![vec![x]]).collect(), 1.0).unwrap()
}

/// Matching pennies in every state with action-dependent symmetric rates.
pub fn pennies() -> GameSpec {
    let rates = (0..2)
        .map(|u| {
            (0..2)
                .map(|v| {
                    let a = 0.5 + u as f64 + 0.5 * v as f64;
                    vec![vec![-a, a], vec![a, -a]]
                })
                .collect()
        })
        .collect();
    let pen = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    GameSpec::new(labels("u", 2), labels("v", 2), rates, vec![pen.clone(), pen], 1.0).unwrap()
}

/// `R ≡ 0`, `g(k,u,v) = 1{u = k}`: knowing the state is worth everything.
pub fn reveal() -> GameSpec {
    let g = vec![vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![vec![0.0, 0.0], vec![1.0, 1.0]]];
    GameSpec::uniform_rates(2, 2, vec![vec![0.0; 2]; 2], g, 1.0).unwrap()
}

/// Both players steer one exit rate each; payoff pays player 1 only on
/// matching actions in matching states.
pub fn asymmetric() -> GameSpec {
    let rates = (0..2)
        .map(|u| {
            (0..2)
                .map(|v| {
                    let a = 0.3 + 0.7 * u as f64;
                    let b = 0.2 + 0.9 * v as f64;
                    vec![vec![-a, a], vec![b, -b]]
                })
                .collect()
        })
        .collect();
    let g = vec![vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![vec![0.0, 0.0], vec![0.0, 1.0]]];
    GameSpec::new(labels("u", 2), labels("v", 2), rates, g, 1.0).unwrap()
}

/// Three states on a cycle, 2×2 actions.
pub fn three_state() -> GameSpec {
    let rates = (0..2)
        .map(|u| {
            (0..2)
                .map(|v| {
                    let a = 0.4 + 0.6 * u as f64;
                    let b = 0.3 + 0.5 * v as f64;
                    vec![vec![-a, a, 0.0], vec![0.0, -b, b], vec![0.5, 0.0, -0.5]]
                })
                .collect()
        })
        .collect();
    let g = vec![
        vec![vec![1.0, 0.0], vec![0.2, 0.6]],
        vec![vec![0.0, 0.7], vec![1.0, 0.0]],
        vec![vec![0.5, 0.5], vec![0.0, 1.0]],
    ];
    GameSpec::new(labels("u", 2), labels("v", 2), rates, g, 1.0).unwrap()
}

/// The two-state battery used by the acceptance run.
pub fn battery() -> Vec<(&'static str, GameSpec)> {
    vec![
        ("trivial", trivial()),
        ("static", static_game()),
        ("pennies", pennies()),
        ("reveal", reveal()),
        ("asymmetric", asymmetric()),
    ]
}

/// Value of a matrix game by brute force over a fine grid of row mixtures
/// (2-row games only): max over `x` of the column minimum.
pub fn two_row_game_value(a: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), 2);
    // The lower envelope of lines is concave in x; its max sits at x ∈ {0,1}
    // or at a pairwise intersection.
    let cols = a[0].len();
    let guarantee = |x: f64| (0..cols).map(|j| x * a[0][j] + (1.0 - x) * a[1][j]).fold(f64::INFINITY, f64::min);
    let mut cands = vec![0.0, 1.0];
    for i in 0..cols {
        for j in 0..cols {
            let (si, sj) = (a[0][i] - a[1][i], a[0][j] - a[1][j]);
            if (si - sj).abs() > 1e-15 {
                let x = (a[1][j] - a[1][i]) / (si - sj);
                if (0.0..=1.0).contains(&x) {
                    cands.push(x);
                }
            }
        }
    }
    cands.into_iter().map(guarantee).fold(f64::NEG_INFINITY, f64::max)
}

pub fn sup_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use proptest::prelude::*;

/// Random valid game with `k` states and at most 3 actions per side.
pub fn arb_game_k(k: usize) -> impl Strategy<Value = GameSpec> {
    (1usize..=3, 1usize..=3, 0.5f64..2.0).prop_flat_map(move |(m, l, r)| {
        (
            proptest::collection::vec(proptest::collection::vec(0.0f64..2.0, k * k), m * l),
            proptest::collection::vec(0.0f64..=1.0, k * m * l),
        )
            .prop_map(move |(rates, g)| {
                let rates = (0..m)
                    .map(|u| {
                        (0..l)
                            .map(|v| {
                                let flat = &rates[u * l + v];
                                (0..k)
                                    .map(|i| {
                                        let mut row: Vec<f64> = (0..k).map(|j| if i == j { 0.0 } else { flat[i * k + j] }).collect();
                                        row[i] = -row.iter().sum::<f64>();
                                        row
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                let payoff = (0..k)
                    .map(|s| (0..m).map(|u| (0..l).map(|v| g[(s * m + u) * l + v]).collect()).collect())
                    .collect();
                GameSpec::new(labels("u", m), labels("v", l), rates, payoff, r).unwrap()
            })
    })
}

pub fn arb_game() -> impl Strategy<Value = GameSpec> {
    (2usize..=3).prop_flat_map(arb_game_k)
}

/// Random point of the simplex of dimension `k`.
pub fn arb_belief(k: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}
