use std::sync::Arc;

use ndarray::{Array2, Array4};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use gfr_core::analysis::svcca_similarity;
use gfr_core::data::{build_task_stream, Dataset, ImageGeometry, LabeledSet, Normalization};
use gfr_core::generator::{standard_normal, CovarianceKind, GaussianPrototypeBank};
use gfr_core::model::{Architecture, ClassifierHead, Model, TapPoint};
use gfr_core::nn::{Adam, Param, Parameterized};
use gfr_core::rng::rng_from_seed;

fn label_only_dataset(classes: usize, per_class: usize) -> Arc<Dataset> {
    let geometry = ImageGeometry::new(1, 1, 3);
    let mut train = LabeledSet::empty(geometry);
    let mut test = LabeledSet::empty(geometry);
    for c in 0..classes as u32 {
        for _ in 0..per_class {
            train.push(c, &[0, 0, 0]);
            test.push(c, &[0, 0, 0]);
        }
    }
    Arc::new(Dataset {
        num_classes: classes,
        geometry,
        normalization: Normalization::identity(3),
        train,
        test,
    })
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    standard_normal(rows, cols, &mut rng_from_seed(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streams_partition_the_vocabulary(first in 1usize..8, tasks in 1usize..6, per_task in 1usize..4, seed in 0u64..1000) {
        let k = first + tasks * per_task;
        let fraction = first as f64 / k as f64;
        let ds = label_only_dataset(k, 2);
        let stream = build_task_stream(ds.clone(), fraction, tasks, seed).unwrap();
        prop_assert_eq!(stream.len(), tasks + 1);
        let mut seen: Vec<u32> = stream.tasks.iter().flat_map(|t| t.class_set.clone()).collect();
        prop_assert_eq!(seen.len(), k);
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..k as u32).collect::<Vec<_>>());
        for task in &stream.tasks {
            prop_assert_eq!(task.train.len(), 2 * task.class_set.len());
            for &i in &task.train {
                prop_assert!(task.class_set.contains(&ds.train.labels[i]));
            }
        }
        let again = build_task_stream(ds, fraction, tasks, seed).unwrap();
        prop_assert_eq!(again.tasks, stream.tasks);
    }

    #[test]
    fn head_extension_preserves_old_logits(classes in 1usize..6, dim in 1usize..9, added in 1usize..5, seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let mut head = ClassifierHead::new(classes, dim, seed % 2 == 0, &mut rng);
        let u = gaussian(7, dim, seed + 1);
        let before = head.logits(&u);
        head.extend(added, &mut rng).unwrap();
        let after = head.logits(&u);
        prop_assert_eq!(after.ncols(), classes + added);
        prop_assert_eq!(after.slice(ndarray::s![.., ..classes]).to_owned(), before);
    }

    #[test]
    fn svcca_is_symmetric_bounded_and_scale_invariant(
        n in 40usize..120,
        p in 1usize..6,
        q in 1usize..6,
        mix in 0.0f64..1.0,
        scale in proptest::collection::vec(0.1f64..10.0, 6),
        seed in 0u64..1000,
    ) {
        let a = gaussian(n, p, seed);
        let noise = gaussian(n, q, seed + 1);
        let shared = gaussian(p, q, seed + 2);
        let b = a.dot(&shared) * mix + noise * (1.0 - mix);
        let ab = svcca_similarity(&a, &b, 1.0).unwrap().similarity;
        let ba = svcca_similarity(&b, &a, 1.0).unwrap().similarity;
        prop_assert!((ab - ba).abs() < 1e-6);
        prop_assert!((0.0..=1.0).contains(&ab));
        let mut rescaled = b.clone();
        for (j, mut col) in rescaled.columns_mut().into_iter().enumerate() {
            col *= scale[j];
        }
        let scaled = svcca_similarity(&a, &rescaled, 1.0).unwrap().similarity;
        prop_assert!((scaled - ab).abs() < 1e-3);
    }

    #[test]
    fn prototype_covariances_are_non_negative(n in 2usize..30, dim in 1usize..6, seed in 0u64..1000) {
        let feats = gaussian(2 * n, dim, seed).mapv(|v| v * 3.0 - 1.0);
        let labels: Vec<usize> = (0..2 * n).map(|i| i % 2).collect();
        for kind in [CovarianceKind::Diagonal, CovarianceKind::Full] {
            let mut bank = GaussianPrototypeBank::new(dim, kind);
            bank.fit(&feats, &labels, &[0, 1]).unwrap();
            let draws = bank.sample(&[0, 1, 1, 0], &mut rng_from_seed(seed)).unwrap();
            prop_assert!(draws.iter().all(|v| v.is_finite()));
            prop_assert_eq!(bank.classes(), vec![0, 1]);
        }
        let mut bank = GaussianPrototypeBank::new(dim, CovarianceKind::Diagonal);
        bank.fit(&feats, &labels, &[0, 1]).unwrap();
        let draws = bank.sample(&vec![1; 4000], &mut rng_from_seed(seed + 1)).unwrap();
        let spread = draws.var_axis(ndarray::Axis(0), 1.0);
        prop_assert!(spread.iter().all(|&v| v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn snapshots_ignore_later_optimizer_steps(steps in 1usize..4, seed in 0u64..1000) {
        let mut rng = rng_from_seed(seed);
        let arch = Architecture::small_cnn(ImageGeometry::new(16, 16, 3), [2, 2, 3, 4]);
        let mut model = Model::new(arch, TapPoint::Feature, 3, false, &mut rng);
        let x = Array4::from_shape_simple_fn((4, 3, 16, 16), || rng.sample::<f64, _>(StandardNormal));
        let snapshot = model.snapshot();
        let recorded = snapshot.logits(&x);
        prop_assert_eq!(&recorded, &model.logits(&x));
        let mut adam = Adam::new(1e-2);
        for _ in 0..steps {
            model.zero_grad();
            let f = model.extractor.forward_to_tap(&x);
            let logits = model.head.forward(&f);
            let df = model.head.backward(&logits);
            model.extractor.backward_from_tap(&df);
            let mut params: Vec<&mut Param> = Vec::new();
            model.extractor.params_mut(&mut params);
            model.head.params_mut(&mut params);
            adam.step(params);
        }
        prop_assert_ne!(&model.logits(&x), &recorded);
        prop_assert_eq!(snapshot.logits(&x), recorded);
    }
}
