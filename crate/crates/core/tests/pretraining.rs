mod common;

use common::*;
use mgdoc::attention::FusedStreams;
use mgdoc::config::{ModelConfig, PretrainTasks, TrainConfig};
use mgdoc::docmodel::{serialize_units, Document, GranularUnit, Granularity, Region, UnitSource, Word};
use mgdoc::encoder::{encode_document, BatchEncoding};
use mgdoc::ingestion::{generate_synthetic, SyntheticCorpusSpec};
use mgdoc::pretraining::*;
use mgdoc::{Error, Granularities, Model, PreparedDoc, Vocab};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn encoding(text: Array2<f64>, vis: Array2<f64>) -> BatchEncoding {
    let n = text.nrows();
    BatchEncoding {
        text_emb: text,
        vis_emb: vis,
        boxes: Array2::zeros((n, 4)),
        granularity: vec![Granularity::Word; n],
        parent_region: vec![-1; n],
    }
}

fn streams(f_tv: Array2<f64>, f_vt: Array2<f64>) -> FusedStreams {
    let f = &f_tv + &f_vt;
    FusedStreams { f_tv, f_vt, f }
}

fn plan(text: Vec<usize>, vision: Vec<usize>) -> MaskPlan {
    MaskPlan { text_masked_rows: text, vision_masked_rows: vision, rng_seed: 0 }
}

#[test]
fn reconstruction_loss_examples() {
    let x = Array2::from_elem((2, 4), 0.3);
    let enc = encoding(x.clone(), x.clone());
    assert_eq!(loss_mtm(&enc, &streams(x.clone(), x.clone()), &plan(vec![0, 1], vec![])), 0.0);

    let enc = encoding(Array2::zeros((1, 4)), Array2::zeros((1, 4)));
    let s = streams(Array2::zeros((1, 4)), Array2::from_elem((1, 4), 0.5));
    assert!((loss_mtm(&enc, &s, &plan(vec![0], vec![])) - 0.5).abs() < 1e-15);

    let enc = encoding(Array2::zeros((1, 3)), Array2::ones((1, 3)));
    let s = streams(Array2::zeros((1, 3)), Array2::zeros((1, 3)));
    assert!((loss_mvm(&enc, &s, &plan(vec![], vec![0])) - 1.0).abs() < 1e-15);
    assert_eq!(loss_mvm(&enc, &s, &plan(vec![], vec![])), 0.0);
}

#[test]
fn reconstruction_losses_match_naive_mae() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (t, v) = (random_matrix(&mut rng, 3, 5, 2.0), random_matrix(&mut rng, 3, 5, 2.0));
        let (a, b) = (random_matrix(&mut rng, 3, 5, 2.0), random_matrix(&mut rng, 3, 5, 2.0));
        let rows: Vec<usize> = (0..3).filter(|_| rng.gen_bool(0.6)).collect();
        let enc = encoding(t.clone(), v.clone());
        let s = streams(a.clone(), b.clone());
        let p = plan(rows.clone(), rows.clone());
        assert!((loss_mtm(&enc, &s, &p) - naive_mae(&b, &t, &rows)).abs() < 1e-7);
        assert!((loss_mvm(&enc, &s, &p) - naive_mae(&a, &v, &rows)).abs() < 1e-7);
    }
}

#[test]
fn mgm_examples_and_oracle() {
    let doc = two_by_two_doc(["a", "b", "c", "d"]);
    let units = serialize_units(&doc).unwrap();
    // Identical features: every word sees two equal scores.
    let f = Array2::from_elem((units.len(), 4), 0.2);
    assert!((loss_mgm(&f, &units) - 2f64.ln()).abs() < 1e-12);
    // Parent score 40 above the other region.
    let mut f = Array2::zeros((units.len(), 2));
    f[[1, 0]] = 1.0;
    f[[2, 1]] = 1.0;
    for (row, u) in units.iter().enumerate().skip(3) {
        if let UnitSource::Word { region, .. } = u.source {
            f[[row, region]] = 40.0;
        }
    }
    assert!(loss_mgm(&f, &units) < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let units = random_units(&mut rng, 9);
        let f = random_matrix(&mut rng, 9, 6, 1.5);
        assert!((loss_mgm(&f, &units) - naive_mgm(&f, &units)).abs() < 1e-7);
    }
}

fn unit(granularity: Granularity, index: usize, source: UnitSource, bbox: mgdoc::BoundingBox) -> GranularUnit {
    GranularUnit { granularity, unit_index: index, source, text: String::new(), bbox }
}

proptest! {
    #[test]
    fn mgm_ignores_order_of_non_parent_regions(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Page, four regions, one word inside region 0.
        let mut units = vec![unit(Granularity::Page, 0, UnitSource::Page, mgdoc::BoundingBox::PAGE)];
        for j in 0..4 {
            units.push(unit(Granularity::Region, j + 1, UnitSource::Region(j), random_box(&mut rng)));
        }
        let inner = box_inside(&mut rng, &units[1].bbox);
        units.push(unit(Granularity::Word, 5, UnitSource::Word { region: 0, word: 0 }, inner));
        let f = random_matrix(&mut rng, 6, 4, 2.0);
        let mut g = f.clone();
        // Rotate the features of the three non-parent regions (rows 2..5).
        for k in 0..4 {
            g[[2, k]] = f[[3, k]];
            g[[3, k]] = f[[4, k]];
            g[[4, k]] = f[[2, k]];
        }
        let (a, b) = (loss_mgm(&f, &units), loss_mgm(&g, &units));
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a >= 0.0);
    }
}

fn corpus(n: usize, seed: u64) -> Vec<Document> {
    generate_synthetic(&SyntheticCorpusSpec { n_docs: n, seed, ..Default::default() }).unwrap()
}

fn model_for(docs: &[Document], seed: u64) -> Model {
    Model::new(ModelConfig::desk(), Vocab::build(docs, 2000), seed).unwrap()
}

fn prepare(model: &Model, docs: &[Document]) -> Vec<PreparedDoc> {
    docs.iter().map(|d| model.prepare(d, Granularities::ALL).unwrap()).collect()
}

/// Four regions of four words: 20 maskable rows besides the page.
fn twenty_row_doc() -> PreparedDoc {
    let mut regions = Vec::new();
    for r in 0..4 {
        let y = 0.1 + 0.2 * r as f64;
        let words = (0..4)
            .map(|w| Word::new(format!("t{r}{w}"), bb(0.1 + 0.1 * w as f64, y, 0.18 + 0.1 * w as f64, y + 0.02)))
            .collect();
        regions.push(Region::from_words(words, None).unwrap());
    }
    let doc = Document::new("twenty", 100, 100, regions, 0.02).unwrap();
    let model = model_for(std::slice::from_ref(&doc), 0);
    model.prepare(&doc, Granularities::ALL).unwrap()
}

#[test]
fn mask_plan_floor_determinism_and_page_exclusion() {
    let prep = twenty_row_doc();
    assert_eq!(prep.n_rows(), 21);
    let p = make_mask_plan(&prep, 1e-12, false, 3);
    assert_eq!((p.text_masked_rows.len(), p.vision_masked_rows.len()), (1, 1));
    assert_eq!(make_mask_plan(&prep, 0.15, false, 99), make_mask_plan(&prep, 0.15, false, 99));
    for s in 0..200 {
        let p = make_mask_plan(&prep, 0.5, false, s);
        assert!(!p.text_masked_rows.contains(&0) && !p.vision_masked_rows.contains(&0));
    }
    let with_page = (0..200).any(|s| make_mask_plan(&prep, 0.5, true, s).text_masked_rows.contains(&0));
    assert!(with_page);
}

#[test]
fn mask_frequency_is_close_to_ratio() {
    let prep = twenty_row_doc();
    let mut counts = vec![0usize; prep.n_rows()];
    let n = 10_000;
    for s in 0..n {
        for r in make_mask_plan(&prep, 0.15, false, derive_seed(7, s, "mc")).text_masked_rows {
            counts[r] += 1;
        }
    }
    for (r, &c) in counts.iter().enumerate().skip(1) {
        let freq = c as f64 / n as f64;
        assert!((freq - 0.15).abs() < 0.02, "row {r}: {freq}");
    }
}

#[test]
fn warmup_schedule() {
    let (total, lr) = (100, 1e-3);
    let warm = warmup_steps(total, 0.2);
    assert_eq!(warm, 20);
    assert_eq!(lr_at(0, total, lr, 0.2), lr / 20.0);
    assert_eq!(lr_at(19, total, lr, 0.2), lr);
    assert_eq!(lr_at(20, total, lr, 0.2), lr);
    assert_eq!(lr_at(99, total, lr, 0.2), lr);
    assert_eq!(lr_at(0, total, lr, 0.0), lr);
}

#[test]
fn report_total_is_the_sum_and_targets_ignore_masking() {
    let docs = corpus(4, 3);
    let model = model_for(&docs, 1);
    let preps = prepare(&model, &docs);
    let mut trainer = Trainer::new(model, TrainConfig::desk(), preps.len()).unwrap();
    let refs: Vec<_> = preps.iter().collect();
    let r = trainer.pretrain_step(&refs).unwrap();
    assert_eq!(r.l_total, r.l_mtm + r.l_mvm + r.l_mgm);
    assert!(r.l_mtm >= 0.0 && r.l_mvm >= 0.0 && r.l_mgm >= 0.0);

    let clean = clean_targets(&trainer.model, &preps[0]).unwrap();
    let enc = encode_document(&trainer.model, &docs[0], None).unwrap();
    assert_eq!(clean.text, enc.text_emb);
    assert_eq!(clean.vis, enc.vis_emb);
    let masked = encode_document(&trainer.model, &docs[0], Some(&plan(vec![1, 2], vec![3]))).unwrap();
    assert_ne!(masked.text_emb, enc.text_emb);
    assert_eq!(clean_targets(&trainer.model, &preps[0]).unwrap(), clean);
}

#[test]
fn target_path_receives_no_gradient() {
    // "zebra" occurs only in word 0 of region 0. The region's text is supplied
    // without it, and the page and word rows are text-masked, so the masked
    // pass never reads zebra's embedding: only the clean target does.
    let mut doc = two_by_two_doc(["zebra", "b", "c", "d"]);
    doc.regions[0].text = Some("b".into());
    let model = model_for(std::slice::from_ref(&doc), 4);
    let prep = model.prepare(&doc, Granularities::ALL).unwrap();
    let word_row = prep.word_rows[0];
    assert_eq!(prep.units[word_row].text, "zebra");
    let p = plan(vec![0, word_row], vec![1]);
    let targets = clean_targets(&model, &prep).unwrap();
    let tasks = PretrainTasks { mtm: true, mvm: false, mgm: false };
    let (report, grads) = pretrain_objective(&model, &prep, &p, &targets, tasks).unwrap();
    assert!(report.l_mtm > 0.0);
    let g = &grads["text.tok_emb"];
    let zebra = model.vocab.id("zebra");
    assert!(g.row(zebra).iter().all(|&v| v == 0.0));
    let c = model.vocab.id("c");
    assert!(g.row(c).iter().any(|&v| v != 0.0), "unmasked tokens do get gradient");
}

#[test]
fn non_finite_loss_names_the_term() {
    let docs = corpus(1, 5);
    let mut model = model_for(&docs, 0);
    model.params.get_mut("text.fc.w").unwrap()[[0, 0]] = f64::NAN;
    let preps = prepare(&model, &docs);
    let mut t = Trainer::new(model, TrainConfig::desk(), 1).unwrap();
    match t.pretrain_step(&[&preps[0]]) {
        Err(Error::NonFinite(term)) => assert_eq!(term, "mtm"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn training_reduces_the_loss() {
    let docs = corpus(50, 11);
    let model = model_for(&docs, 2);
    let preps = prepare(&model, &docs);
    let cfg = TrainConfig { batch_size: 2, epochs: 8, ..TrainConfig::desk() };
    let mut t = Trainer::new(model, cfg, preps.len()).unwrap();
    assert_eq!(t.total_steps, 200);
    let reports = t.run(&preps, |_, _| Ok(())).unwrap();
    let smooth = |r: &[LossReport]| r.iter().map(|x| x.l_total).sum::<f64>() / r.len() as f64;
    assert!(smooth(&reports[190..]) < smooth(&reports[..10]));
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(6, 12);
    let preps = prepare(&model_for(&docs, 3), &docs);
    let cfg = TrainConfig { batch_size: 2, epochs: 2, ..TrainConfig::desk() };

    let mut straight = Trainer::new(model_for(&docs, 3), cfg.clone(), preps.len()).unwrap();
    let all = straight.run(&preps, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(model_for(&docs, 3), cfg, preps.len()).unwrap();
    first.run_until(&preps, 3, |_, _| Ok(())).unwrap();
    let path = dir.path().join("ckpt-3.bin");
    let ck = Checkpoint::from_trainer(&first);
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ck);
    for (name, t) in ck.params.iter() {
        let back = loaded.params.get(name).unwrap();
        assert!(t.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let mut resumed = loaded.into_trainer().unwrap();
    assert_eq!(resumed.step, 3);
    let rest = resumed.run(&preps, |_, _| Ok(())).unwrap();
    assert_eq!(rest.len(), all.len() - 3);
    assert_eq!(rest[..], all[3..]);
    assert_eq!(resumed.model.params, straight.model.params);
}

#[test]
fn checkpoint_with_other_width_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let docs = corpus(1, 1);
    let mut cfg = ModelConfig::desk();
    cfg.encoder.d_model = 32;
    let small = Model::new(cfg, Vocab::build(&docs, 100), 0).unwrap();
    let t = Trainer::new(small, TrainConfig::desk(), 1).unwrap();
    let path = dir.path().join("c.bin");
    Checkpoint::from_trainer(&t).save(&path).unwrap();
    let mut big = Model::new(ModelConfig::desk(), Vocab::build(&docs, 100), 0).unwrap();
    match Checkpoint::load(&path).unwrap().restore_into(&mut big) {
        Err(Error::Shape { name, .. }) => assert!(!name.is_empty()),
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let docs = corpus(5, 13);
    let run = || {
        let model = model_for(&docs, 4);
        let preps = prepare(&model, &docs);
        let cfg = TrainConfig { batch_size: 2, epochs: 2, ..TrainConfig::desk() };
        let mut t = Trainer::new(model, cfg, preps.len()).unwrap();
        let mut logs = Vec::new();
        t.run(&preps, |_, l| {
            logs.push(serde_json::to_string(l).unwrap());
            Ok(())
        })
        .unwrap();
        logs
    };
    assert_eq!(run(), run());
}
