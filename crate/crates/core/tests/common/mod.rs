#![allow(dead_code)]

use nalgebra::Vector3;
use physdiff::dynamics::{Multibody, RigidBodySet, GRAVITY};
use physdiff::inertia::BodyParams;
use physdiff::kinematics::{KinematicTree, Link};
use rand::Rng;

/// Random tree with `links` links: boxes with offset centers of mass, offsets
/// up to 10 cm, alternating serial and branching attachment.
pub fn random_chain(rng: &mut impl Rng, links: usize) -> Multibody {
    let mut tree_links = vec![Link {
        parent: None,
        offset: Vector3::zeros(),
    }];
    for k in 1..links {
        let parent = if k % 2 == 0 { 0 } else { k - 1 };
        tree_links.push(Link {
            parent: Some(parent),
            offset: Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
        });
    }
    let bodies = (0..links)
        .map(|_| {
            let ext = Vector3::from_fn(|_, _| rng.random_range(0.02..0.1));
            let com = Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
            BodyParams::solid_box(rng.random_range(0.1..2.0), ext, com)
        })
        .collect();
    Multibody::new(
        KinematicTree::new(tree_links).unwrap(),
        RigidBodySet::new(bodies).unwrap(),
        GRAVITY,
    )
    .unwrap()
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Average ranks, ties sharing the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            out[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut c, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        c += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    c / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// One-sided sign-test p-value: probability of at least `wins` successes in
/// `n` fair coin flips.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

#[test]
fn rank_helpers() {
    assert_eq!(ranks(&[3.0, 1.0, 2.0, 1.0]), vec![3.0, 0.5, 2.0, 0.5]);
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]) + 1.0).abs() < 1e-12);
    assert!((sign_test_p(5, 5) - 1.0 / 32.0).abs() < 1e-15);
    assert!((sign_test_p(4, 5) - 6.0 / 32.0).abs() < 1e-15);
    assert_eq!(sign_test_p(0, 5), 1.0);
}
