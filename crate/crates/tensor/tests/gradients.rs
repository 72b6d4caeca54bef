use proptest::prelude::*;
use stmc_tensor::gradcheck::{primitive_suite, GradCheckConfig};
use stmc_tensor::tape::inject_backward_fault;
use stmc_tensor::{NdArray, OpKind, Tape};

#[test]
fn every_primitive_passes_finite_differences() {
    let reports = primitive_suite(&GradCheckConfig::default()).unwrap();
    for r in &reports {
        println!("{r}");
    }
    assert!(reports.iter().all(|r| r.passed()));
    assert!(reports.iter().all(|r| r.max_rel_error < 1e-4));
}

#[test]
fn corrupted_backward_rule_is_reported_by_name() {
    inject_backward_fault(Some(OpKind::Relu));
    let reports = primitive_suite(&GradCheckConfig::default()).unwrap();
    inject_backward_fault(None);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    assert_eq!(failed, vec!["relu"]);
}

proptest! {
    #[test]
    fn softmax_rows_are_stochastic(rows in 1usize..5, cols in 1usize..7, seed in any::<u64>(), shift in -50.0f64..50.0) {
        let n = rows * cols;
        let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64 * 2654435761) % 2000) as f64 / 100.0) - 10.0 + shift).collect();
        let mut t = Tape::new();
        let x = t.constant(NdArray::new(vec![rows, cols], data).unwrap());
        let y = t.row_softmax(x);
        for row in t.value(y).data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_then_split_is_identity_and_gradients_split_losslessly(widths in prop::collection::vec(1usize..4, 1..5), t_len in 1usize..4) {
        let mut t = Tape::<f64>::new();
        let mut parts = Vec::new();
        let mut k = 0.0;
        for &w in &widths {
            let data: Vec<f64> = (0..t_len * w).map(|_| { k += 1.0; k }).collect();
            parts.push(t.leaf(NdArray::new(vec![t_len, w], data).unwrap(), true));
        }
        let cat = t.concat_channels(&parts).unwrap();
        let back = t.split_channels(cat, &widths).unwrap();
        for (p, b) in parts.iter().zip(&back) {
            prop_assert_eq!(t.value(*p), t.value(*b));
        }
        let w = t.constant(NdArray::new(t.shape(cat).to_vec(), (0..t.value(cat).len()).map(|i| (i as f64).sin()).collect()).unwrap());
        let prod = t.mul(cat, w).unwrap();
        let s = t.sum(prod);
        t.backward(s).unwrap();
        let total: f64 = t.value(w).data().iter().map(|v| v * v).sum();
        let split: f64 = parts.iter().map(|&p| t.grad(p).unwrap().data().iter().map(|v| v * v).sum::<f64>()).sum();
        prop_assert!((total - split).abs() < 1e-12);
    }

    #[test]
    fn maxpool_bounded_by_window_with_one_gradient_per_window(data in prop::collection::vec(-5.0f64..5.0, 4..24)) {
        let tl = data.len() / 2 * 2;
        let x0 = NdArray::new(vec![tl / 2, 2], data[..tl].to_vec()).unwrap();
        let mut t = Tape::new();
        let x = t.leaf(x0.clone(), true);
        let y = t.temporal_maxpool(x).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        let g = t.grad(x).unwrap();
        for ti in 0..t.shape(y)[0] {
            for c in 0..2 {
                let window = [x0.at(&[2 * ti, c]), x0.at(&[2 * ti + 1, c])];
                prop_assert!(t.value(y).at(&[ti, c]) <= window[0].max(window[1]));
                let nz = [g.at(&[2 * ti, c]), g.at(&[2 * ti + 1, c])].iter().filter(|v| **v != 0.0).count();
                prop_assert_eq!(nz, 1);
            }
        }
    }
}
