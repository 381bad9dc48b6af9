use proptest::prelude::*;
use vkmeans::chebyshev;
use vkmeans::engine::{Engine, EngineConfig, SlotVector};

const SLOTS: usize = 16;

fn engine(budget: u32) -> Engine {
    Engine::new(EngineConfig::new(SLOTS, budget).unwrap()).unwrap()
}

fn slots() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, SLOTS)
}

#[derive(Clone, Debug)]
enum Expr {
    Leaf { encrypted: bool, values: Vec<f64> },
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Rot(Box<Expr>, i64),
    Scale(Box<Expr>, f64),
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = (any::<bool>(), prop::collection::vec(-1.0f64..1.0, SLOTS))
        .prop_map(|(encrypted, values)| Expr::Leaf { encrypted, values });
    leaf.prop_recursive(5, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), -20i64..20).prop_map(|(a, r)| Expr::Rot(Box::new(a), r)),
            (inner, -2.0f64..2.0).prop_map(|(a, c)| Expr::Scale(Box::new(a), c)),
        ]
    })
}

/// Depth and ciphertext-ness under the cost model: products involving a
/// ciphertext cost one level, everything else is free.
fn reference_depth(x: &Expr) -> (u32, bool) {
    match x {
        Expr::Leaf { encrypted, .. } => (0, *encrypted),
        Expr::Add(a, b) => {
            let (da, ca) = reference_depth(a);
            let (db, cb) = reference_depth(b);
            (da.max(db), ca || cb)
        }
        Expr::Mul(a, b) => {
            let (da, ca) = reference_depth(a);
            let (db, cb) = reference_depth(b);
            if ca || cb {
                (da.max(db) + 1, true)
            } else {
                (da.max(db), false)
            }
        }
        Expr::Rot(a, _) => reference_depth(a),
        Expr::Scale(a, _) => {
            let (d, c) = reference_depth(a);
            (if c { d + 1 } else { d }, c)
        }
    }
}

fn reference_values(x: &Expr) -> Vec<f64> {
    match x {
        Expr::Leaf { values, .. } => values.clone(),
        Expr::Add(a, b) => reference_values(a).iter().zip(reference_values(b)).map(|(x, y)| x + y).collect(),
        Expr::Mul(a, b) => reference_values(a).iter().zip(reference_values(b)).map(|(x, y)| x * y).collect(),
        Expr::Rot(a, r) => {
            let v = reference_values(a);
            (0..SLOTS).map(|j| v[(j as i64 + r).rem_euclid(SLOTS as i64) as usize]).collect()
        }
        Expr::Scale(a, c) => reference_values(a).iter().map(|x| x * c).collect(),
    }
}

fn evaluate(e: &Engine, x: &Expr) -> SlotVector {
    match x {
        Expr::Leaf { encrypted: true, values } => e.encrypt(values).unwrap(),
        Expr::Leaf { encrypted: false, values } => e.encode(values).unwrap(),
        Expr::Add(a, b) => e.add(&evaluate(e, a), &evaluate(e, b)).unwrap(),
        Expr::Mul(a, b) => e.mul(&evaluate(e, a), &evaluate(e, b)).unwrap(),
        Expr::Rot(a, r) => e.rotate(&evaluate(e, a), *r),
        Expr::Scale(a, c) => e.mul_scalar(&evaluate(e, a), *c).unwrap(),
    }
}

proptest! {
    #[test]
    fn rotation_inverts(v in slots(), r in -100i64..100) {
        let e = engine(0);
        let x = e.encrypt(&v).unwrap();
        prop_assert_eq!(e.decrypt(&e.rotate(&e.rotate(&x, r), -r)), v);
    }

    #[test]
    fn arithmetic_is_slotwise(a in slots(), b in slots()) {
        let e = engine(1);
        let (x, y) = (e.encrypt(&a).unwrap(), e.encrypt(&b).unwrap());
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let prod: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
        prop_assert_eq!(e.decrypt(&e.add(&x, &y).unwrap()), sum);
        prop_assert_eq!(e.decrypt(&e.mul(&x, &y).unwrap()), prod);
    }

    #[test]
    fn perturbed_products_stay_within_bound(a in slots(), b in slots(), seed in any::<u64>()) {
        let mut cfg = EngineConfig::new(SLOTS, 1).unwrap();
        cfg.approx_perturbation = 1e-4;
        cfg.perturbation_seed = seed;
        let e = Engine::new(cfg).unwrap();
        let got = e.decrypt(&e.mul(&e.encrypt(&a).unwrap(), &e.encrypt(&b).unwrap()).unwrap());
        for ((g, p), q) in got.iter().zip(&a).zip(&b) {
            prop_assert!((g - p * q).abs() <= 1e-4 * (p * q).abs() + 1e-15);
        }
    }

    #[test]
    fn depth_follows_the_syntax_tree(x in expr()) {
        let e = engine(64);
        let v = evaluate(&e, &x);
        let (depth, encrypted) = reference_depth(&x);
        prop_assert_eq!(v.depth_consumed(), depth);
        prop_assert_eq!(v.is_ciphertext(), encrypted);
        for (g, w) in e.decrypt(&v).iter().zip(reference_values(&x)) {
            prop_assert!((g - w).abs() <= 1e-9 * (1.0 + w.abs()));
        }
    }

    #[test]
    fn chebyshev_matches_scalar_clenshaw(
        v in prop::collection::vec(-1.0f64..1.0, SLOTS),
        coeffs in prop::collection::vec(-1.0f64..1.0, 2..40),
    ) {
        let e = engine(8);
        let out = e.eval_chebyshev(&e.encrypt(&v).unwrap(), &coeffs).unwrap();
        for (g, x) in out.slots().iter().zip(&v) {
            prop_assert!((g - chebyshev::clenshaw(&coeffs, *x)).abs() < 1e-9);
        }
    }
}

#[test]
fn exceeding_the_budget_is_an_error() {
    let e = engine(2);
    let x = e.encrypt(&[1.0]).unwrap();
    let y = e.square(&e.square(&x).unwrap()).unwrap();
    assert!(e.square(&y).is_err());
    assert_eq!(e.levels_remaining(&y), 0);
}
