use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use tbrw::exact::{
    enumerate, ho_series_terms, Complement, HitRootAt, NoRenewalBy, ProbPolynomial, WholeSpace,
};

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// One realization of the walk, recorded by brute force.
struct Path {
    added: usize,
    weight: BigRational,
    depth: Vec<u32>,
    degree: Vec<u32>,
}

/// Plain depth-first walk over every realization, with an adjacency-list
/// tree and no state sharing.
fn all_paths(n: usize) -> Vec<Path> {
    fn neighbours(parent: &[Option<usize>], children: &[Vec<usize>], x: usize) -> Vec<usize> {
        parent[x]
            .into_iter()
            .chain(children[x].iter().copied())
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn go(
        n: usize,
        parent: &mut Vec<Option<usize>>,
        children: &mut Vec<Vec<usize>>,
        depth_of: &mut Vec<u32>,
        x: usize,
        weight: BigRational,
        added: usize,
        depth: &mut Vec<u32>,
        degree: &mut Vec<u32>,
        out: &mut Vec<Path>,
    ) {
        if depth.len() == n + 1 {
            out.push(Path {
                added,
                weight,
                depth: depth.clone(),
                degree: degree.clone(),
            });
            return;
        }
        for grow in [false, true] {
            if grow {
                let v = parent.len();
                parent.push(Some(x));
                children.push(Vec::new());
                children[x].push(v);
                depth_of.push(depth_of[x] + 1);
            }
            let nb = neighbours(parent, children, x);
            for &y in &nb {
                depth.push(depth_of[y]);
                degree.push(neighbours(parent, children, y).len() as u32);
                let w = &weight / BigRational::from(BigInt::from(nb.len()));
                go(
                    n,
                    parent,
                    children,
                    depth_of,
                    y,
                    w,
                    added + grow as usize,
                    depth,
                    degree,
                    out,
                );
                depth.pop();
                degree.pop();
            }
            if grow {
                parent.pop();
                children.pop();
                children[x].pop();
                depth_of.pop();
            }
        }
    }

    let mut out = Vec::new();
    go(
        n,
        &mut vec![None, Some(0)],
        &mut vec![vec![1], vec![]],
        &mut vec![0, 1],
        1,
        BigRational::one(),
        0,
        &mut vec![1],
        &mut vec![1],
        &mut out,
    );
    out
}

fn oracle(n: usize, event: impl Fn(&Path) -> bool) -> Vec<BigRational> {
    let mut c = vec![BigRational::zero(); n + 1];
    for path in all_paths(n).iter().filter(|p| event(p)) {
        c[path.added] += &path.weight;
    }
    c
}

fn first_root_hit(path: &Path) -> Option<usize> {
    path.depth.iter().position(|&d| d == 0)
}

fn no_renewal(path: &Path) -> bool {
    let d = &path.depth;
    let n = d.len() - 1;
    !(1..=n).any(|m| {
        path.degree[m] == 1 && d[..m].iter().all(|&s| s < d[m]) && d[m..].iter().all(|&t| t >= d[m])
    })
}

#[test]
fn enumeration_matches_brute_force() {
    for n in 1..=7 {
        assert_eq!(
            enumerate(n, &WholeSpace).unwrap().coefficients(),
            oracle(n, |_| true).as_slice()
        );
        for target in 1..=n {
            assert_eq!(
                enumerate(n, &HitRootAt::new(target))
                    .unwrap()
                    .coefficients(),
                oracle(n, |p| first_root_hit(p) == Some(target)).as_slice(),
                "n = {n}, target = {target}"
            );
        }
        assert_eq!(
            enumerate(n, &NoRenewalBy).unwrap().coefficients(),
            oracle(n, no_renewal).as_slice(),
            "n = {n}"
        );
    }
}

#[test]
fn brute_force_weights_are_probabilities() {
    let paths = all_paths(5);
    assert!(paths
        .iter()
        .all(|p| p.weight > BigRational::zero() && p.weight <= BigRational::one()));
    assert!(paths.iter().all(|p| p.added <= 5));
}

#[test]
fn normalization_up_to_ten() {
    for n in 1..=10 {
        assert!(enumerate(n, &WholeSpace).unwrap().is_one(), "n = {n}");
    }
}

#[test]
fn first_hit_at_one_is_one_minus_half_p() {
    let poly = enumerate(1, &HitRootAt::new(1)).unwrap();
    for k in 0..=10 {
        let p = rat(k, 10);
        assert_eq!(poly.eval_rational(&p), BigRational::one() - &p / rat(2, 1));
    }
}

#[test]
fn even_terms_of_the_series_vanish() {
    let terms = ho_series_terms(10).unwrap();
    assert_eq!(terms[0], enumerate(1, &HitRootAt::new(1)).unwrap());
    for (k, term) in terms.iter().enumerate() {
        assert_eq!(term.is_zero(), (k + 1) % 2 == 0, "n = {}", k + 1);
    }
}

#[test]
fn complement_and_disjoint_union_add_up() {
    let n = 8;
    let mut union = ProbPolynomial::zero(n);
    for target in 1..=n {
        union = union
            .checked_add(&enumerate(n, &HitRootAt::new(target)).unwrap())
            .unwrap();
    }
    let rest = enumerate(n, &Complement(HitRootAtAny)).unwrap();
    assert!(union.checked_add(&rest).unwrap().is_one());

    let no = enumerate(n, &NoRenewalBy).unwrap();
    let yes = enumerate(n, &Complement(NoRenewalBy)).unwrap();
    assert!(no.checked_add(&yes).unwrap().is_one());
}

/// Root visited at some step in `[1, n]`.
#[derive(Clone, Copy)]
struct HitRootAtAny;

impl tbrw::exact::EventMonitor for HitRootAtAny {
    type Memory = bool;

    fn start(&self, _: &tbrw::exact::StepView) -> Option<bool> {
        Some(false)
    }

    fn advance(&self, hit: &bool, view: &tbrw::exact::StepView) -> Option<bool> {
        Some(*hit || view.at_root)
    }

    fn accept(&self, hit: &bool, _: usize) -> bool {
        *hit
    }
}

#[test]
fn first_hit_dominated_by_no_renewal() {
    let terms = ho_series_terms(10).unwrap();
    for (k, hit) in terms.iter().enumerate() {
        let n = k + 1;
        let none = enumerate(n, &NoRenewalBy).unwrap();
        for (a, b) in hit.coefficients().iter().zip(none.coefficients()) {
            assert!(a <= b, "n = {n}");
        }
        for g in 0..=100 {
            let p = rat(g, 100);
            assert!(
                hit.eval_rational(&p) <= none.eval_rational(&p),
                "n = {n}, p = {p}"
            );
        }
    }
}

#[test]
fn partial_sums_at_full_growth() {
    let terms = ho_series_terms(11).unwrap();
    let one = BigRational::one();
    let mut sums = Vec::new();
    let mut acc = BigRational::zero();
    for term in &terms {
        acc += term.eval_rational(&one);
        sums.push(acc.clone());
    }
    assert!(sums.windows(2).all(|w| w[0] <= w[1]));
    assert!(sums.iter().all(|s| *s > BigRational::zero() && *s < one));
    assert_eq!(sums[8], rat(165_577, 259_200));
    // strictly larger once the next odd term is included
    assert!(sums[10] > sums[8]);
}

#[test]
fn partial_sums_bounded_on_the_unit_interval() {
    let terms = ho_series_terms(9).unwrap();
    for g in 0..=20 {
        let p = rat(g, 20);
        let total: BigRational = terms.iter().map(|t| t.eval_rational(&p)).sum();
        assert!(total <= BigRational::one());
    }
}
