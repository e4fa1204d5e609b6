//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every check compares library output
//! against an independently written oracle or a directly recomputed quantity.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use neurotext::annotate::load_annotation_table;
use neurotext::interventions::pipeline_divergence;
use neurotext::meaning::{parse_mr, serialize_mr, MeaningRepresentation, NeuronEntry};
use neurotext::pipeline::Pipeline;
use neurotext::relevance::{filter_relevance, lrp_backward, top_k_neurons};
use neurotext::spatial::{simplify_positions, CellSet, PositionLabel};
use neurotext::stability::{
    bleu, clip, inter_set_stability, intra_set_stability, meteor, perturb, NoiseSpec, StabilityReport,
};
use neurotext::synth::{self, Split};
use neurotext::verbalize::{generate_template, Realizer};
use neurotext::{Image, Network, NeuronId, NeuronMask, Prediction};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

const FIXTURE_SEED: u64 = 99;
const FIXTURES_PER_CLASS: usize = 20;
const RANDOM_REPS: usize = 50;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn model_path() -> PathBuf {
    root().join("assets/reference/model.ntc")
}

fn table_path() -> PathBuf {
    root().join("assets/reference/annotations.tsv")
}

fn model() -> Network {
    Network::load(&model_path()).expect("reference model loads")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> Vec<synth::Sample> {
    synth::samples(FIXTURE_SEED, Split::Fixture, FIXTURES_PER_CLASS)
}

fn delta_p(original: &Prediction, modified: &Prediction) -> (bool, f64) {
    let c = original.predicted_index;
    (
        modified.predicted_index != c,
        original.probabilities[c] as f64 - modified.probabilities[c] as f64,
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- 1

fn lrp_conservation() -> Check {
    let net = model().without_biases();
    let mut worst = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::new(36, 36, 3, (0..36 * 36 * 3).map(|_| rng.random::<f32>()).collect()).unwrap();
        let (pred, acts) = net.forward(&img, &NeuronMask::empty()).map_err(|e| e.to_string())?;
        let target = pred.predicted_index;
        let logit = acts.logits()[target] as f64;
        let rel = lrp_backward(&net, &acts, target).map_err(|e| e.to_string())?;

        let mut sums = vec![rel.input().data.iter().sum::<f64>()];
        for layer in net.layers() {
            sums.push(rel.layer(&layer.name).unwrap().data.iter().sum::<f64>());
        }
        for pair in sums.windows(2) {
            worst = worst.max(((pair[0] - pair[1]) / logit).abs());
        }
        worst = worst.max(((sums[0] - logit) / logit).abs());

        if seed % 10 == 0 {
            let oracle = oracles::lrp(&net, &acts, target);
            let scale = oracle[0].iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            for (a, b) in rel.input().data.iter().zip(&oracle[0]) {
                worst_oracle = worst_oracle.max((a - b).abs() / scale);
            }
        }
    }
    ensure(worst < 1e-4, || format!("relative conservation error {worst:.3e}"))?;
    ensure(worst_oracle < 1e-9, || format!("input relevance differs from oracle by {worst_oracle:.3e}"))?;
    Ok(format!("max relative error {worst:.2e} over 100 inputs; oracle agreement {worst_oracle:.1e}"))
}

// ---------------------------------------------------------------- 2

fn spatial_oracle() -> Check {
    let mut mismatches = Vec::new();
    for bits in 0u16..512 {
        let got: Vec<String> = simplify_positions(CellSet::from_bits(bits)).iter().map(|l| l.to_string()).collect();
        let active: [bool; 9] = std::array::from_fn(|c| bits & (1 << c) != 0);
        let want = oracles::positions(&active);
        if got != want {
            mismatches.push(format!("{bits:09b}: {got:?} vs {want:?}"));
        }
    }
    ensure(mismatches.is_empty(), || format!("{} mismatches, first {}", mismatches.len(), mismatches[0]))?;
    let labels = |cells: &[usize]| -> Vec<PositionLabel> { simplify_positions(CellSet::from_cells(cells)) };
    ensure(labels(&[0, 1, 2]) == [PositionLabel::EntireTop], || "{0,1,2}".into())?;
    ensure(labels(&[0, 1, 2, 3, 4, 5]) == [PositionLabel::UpperHalf], || "{0..5}".into())?;
    ensure(labels(&[0, 1, 2, 3, 4, 5, 6]) == [PositionLabel::EntireImage], || "7 cells".into())?;
    Ok("512/512 subsets agree; worked examples hold".into())
}

// ------------------------------------------------------------- 3 and 4

struct MaskingData {
    top1: Vec<(bool, f64)>,
    random: Vec<(bool, f64)>,
    sweep: Vec<Vec<(bool, f64)>>,
    library_agrees: bool,
}

fn masking_data() -> Result<MaskingData, String> {
    let net = model();
    let layer = net.last_conv_layer().to_owned();
    let conv_index = net.layer_index(&layer).unwrap();
    let filters = net.list_neurons(&layer).map_err(|e| e.to_string())?.len();
    let mut data = MaskingData {
        top1: Vec::new(),
        random: Vec::new(),
        sweep: vec![Vec::new(); 5],
        library_agrees: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for sample in fixtures() {
        let (original, acts) = net.forward(&sample.image, &NeuronMask::empty()).map_err(|e| e.to_string())?;
        let target = original.predicted_index;

        let rel = oracles::lrp(&net, &acts, target);
        let scores = oracles::filter_sums(&rel[conv_index + 1], filters);
        let top5 = oracles::top_k(&scores, 5);

        let library = lrp_backward(&net, &acts, target)
            .and_then(|r| filter_relevance(&r, &layer))
            .and_then(|s| top_k_neurons(&s, 5))
            .map_err(|e| e.to_string())?;
        if library.iter().map(|n| n.filter_index).collect::<Vec<_>>() != top5 {
            data.library_agrees = false;
        }

        let mut mask = NeuronMask::empty();
        for (j, &f) in top5.iter().enumerate() {
            mask.insert(NeuronId::new(&layer, f));
            let (masked, _) = net.forward(&sample.image, &mask).map_err(|e| e.to_string())?;
            let outcome = delta_p(&original, &masked);
            if j == 0 {
                data.top1.push(outcome);
            }
            data.sweep[j].push(outcome);
        }
        for _ in 0..RANDOM_REPS {
            let f = rng.random_range(0..filters);
            let mask: NeuronMask = std::iter::once(NeuronId::new(&layer, f)).collect();
            let (masked, _) = net.forward(&sample.image, &mask).map_err(|e| e.to_string())?;
            data.random.push(delta_p(&original, &masked));
        }
    }
    Ok(data)
}

fn directional_faithfulness(data: &MaskingData) -> Check {
    ensure(data.top1.len() >= 200, || format!("only {} images", data.top1.len()))?;
    ensure(data.library_agrees, || "library top-5 selection differs from the oracle".into())?;
    let dp = |v: &[(bool, f64)]| mean(&v.iter().map(|o| o.1).collect::<Vec<_>>());
    let (top, random) = (dp(&data.top1), dp(&data.random));
    ensure(top > random, || format!("top-1 Δp {top:.4} not above random {random:.4}"))?;
    Ok(format!(
        "top-1 Δp {top:.4} vs random Δp {random:.4} (margin {:.4}); {} images, {} random masks",
        top - random,
        data.top1.len(),
        data.random.len()
    ))
}

fn decreasing_steps(series: &[f64]) -> usize {
    series.windows(2).filter(|w| w[1] < w[0]).count()
}

fn sweep_trend(data: &MaskingData) -> Check {
    let dps: Vec<f64> = data.sweep.iter().map(|s| mean(&s.iter().map(|o| o.1).collect::<Vec<_>>())).collect();
    let cfs: Vec<f64> = data
        .sweep
        .iter()
        .map(|s| s.iter().filter(|o| o.0).count() as f64 / s.len() as f64)
        .collect();
    let (bad_dp, bad_cf) = (decreasing_steps(&dps), decreasing_steps(&cfs));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    ensure(bad_dp <= 1 && bad_cf <= 1, || {
        format!("Δp [{}] has {bad_dp} drops, c.f. [{}] has {bad_cf}", fmt(&dps), fmt(&cfs))
    })?;
    Ok(format!("Δp [{}], c.f. [{}]", fmt(&dps), fmt(&cfs)))
}

// ---------------------------------------------------------------- 5

fn stability_ordering() -> Check {
    let table = load_annotation_table(&table_path()).map_err(|e| e.to_string())?;
    let pipeline = Pipeline::new(model(), Box::new(table), Realizer::Template);
    let samples = fixtures();
    let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let seed = 0;

    let run = |i: f64| intra_set_stability(&pipeline, &images, NoiseSpec::new(i, seed).unwrap());
    let low = run(0.05).map_err(|e| e.to_string())?;
    let high = run(0.2).map_err(|e| e.to_string())?;

    let mut originals = Vec::new();
    let mut by_class: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in &samples {
        let text = pipeline.explain(&s.image).map_err(|e| e.to_string())?.explanation.text;
        by_class.entry(s.label().to_owned()).or_default().push(text.clone());
        originals.push(text);
    }
    let inter = inter_set_stability(&by_class, seed).map_err(|e| e.to_string())?;

    // Recompute the intra-set BLEU and class-flip rate directly.
    for report in [&low, &high] {
        let intensity: f64 = if report.setting.contains("0.05") { 0.05 } else { 0.2 };
        let mut pairs = Vec::new();
        let mut flips = 0;
        for (j, img) in images.iter().enumerate() {
            let noisy = perturb(img, NoiseSpec::new(intensity, seed).unwrap().for_index(j));
            let out = pipeline.explain(&noisy).map_err(|e| e.to_string())?;
            let orig = pipeline.network().forward(img, &NeuronMask::empty()).map_err(|e| e.to_string())?.0;
            flips += usize::from(out.analysis.prediction.predicted_index != orig.predicted_index);
            pairs.push((out.explanation.text, vec![originals[j].clone()]));
        }
        let oracle_bleu = oracles::bleu(&pairs);
        ensure((oracle_bleu - report.bleu).abs() < 1e-9, || {
            format!("{}: BLEU {} vs oracle {oracle_bleu}", report.setting, report.bleu)
        })?;
        let cf = flips as f64 / images.len() as f64;
        ensure(report.cf_rate == Some(cf), || format!("{}: c.f. {:?} vs {cf}", report.setting, report.cf_rate))?;
    }

    let row = |r: &StabilityReport| format!("BLEU {:.2} METEOR {:.3}", r.bleu, r.meteor);
    let summary = format!(
        "intra(0.05) {} c.f. {:.2}; intra(0.2) {} c.f. {:.2}; inter {}; n={}",
        row(&low),
        low.cf_rate.unwrap(),
        row(&high),
        high.cf_rate.unwrap(),
        row(&inter),
        images.len()
    );
    ensure(low.bleu > high.bleu && high.bleu > inter.bleu, || format!("BLEU order fails: {summary}"))?;
    ensure(low.meteor > high.meteor && high.meteor > inter.meteor, || format!("METEOR order fails: {summary}"))?;
    ensure(high.cf_rate > low.cf_rate, || format!("c.f. order fails: {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- 6

fn perturbation_kernel() -> Check {
    use rand_distr::{Distribution, StandardNormal};
    ensure(clip(-0.5) == 0.0 && clip(0.3) == 0.3 && clip(1.2) == 1.0, || "clip cases".into())?;
    let samples = fixtures();
    for (j, s) in samples.iter().enumerate() {
        let same = perturb(&s.image, NoiseSpec::new(0.0, j as u64).unwrap());
        ensure(same.pixels() == s.image.pixels(), || format!("i=0 changed image {j}"))?;
        for intensity in [0.05, 0.2, 1.0, 5.0] {
            let out = perturb(&s.image, NoiseSpec::new(intensity, 7).unwrap().for_index(j));
            ensure(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)), || format!("out of range at {j}"))?;
        }
    }
    let spec = NoiseSpec::new(0.2, 11).unwrap();
    let img = &samples[3].image;
    let out = perturb(img, spec);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (&v, &p) in img.pixels().iter().zip(out.pixels()) {
        let z: f64 = StandardNormal.sample(&mut rng);
        ensure(p == ((v as f64 + 0.2 * z) as f32).clamp(0.0, 1.0), || "noise differs from direct draws".into())?;
    }
    Ok(format!("identity, range and clip cases hold on {} images", samples.len()))
}

// ---------------------------------------------------------------- 7

const VOCAB: [&str; 30] = [
    "the", "a", "model", "classified", "image", "as", "because", "it", "detected", "clocks", "clock", "gauges",
    "gauge", "water", "waters", "running", "runs", "at", "top-left", "corner", "center", "and", "bottom", "stripes",
    "striped", "ring", "rings", "Nature,", "lake.", "of",
];

fn random_sentence(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let s = random_sentence(&mut rng, 1, 40);
        let b = bleu(&s, &[&s]).map_err(|e| e.to_string())?;
        let m = meteor(&s, &[&s]).map_err(|e| e.to_string())?;
        ensure((b - 100.0).abs() < 1e-9 && (m - 1.0).abs() < 1e-12, || format!("{s:?}: BLEU {b}, METEOR {m}"))?;
    }

    let mut pairs: Vec<(String, String)> = [
        ("the model detected clocks at the center", "it detected clocks and gauges at the center"),
        ("running water at the bottom", "water runs at the bottom"),
        ("gauges", "a gauge"),
        ("striped rings", "stripes and a ring"),
        ("Nature, lake.", "nature and a lake"),
        ("the cat sat on the mat", "the cat is on the mat"),
        ("clocks at the top-left corner", "clock at the top-left corner"),
        ("a b c d e f", "f e d c b a"),
        ("the the the the", "the cat"),
        ("entirely different words", "nothing shared here"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    while pairs.len() < 50 {
        pairs.push((random_sentence(&mut rng, 1, 7), random_sentence(&mut rng, 1, 7)));
    }
    let mut worst = 0.0f64;
    for (cand, reference) in &pairs {
        let refs = vec![reference.clone()];
        let b = bleu(cand, &refs).map_err(|e| e.to_string())?;
        let m = meteor(cand, &refs).map_err(|e| e.to_string())?;
        let (ob, om) = (oracles::bleu(&[(cand.clone(), refs.clone())]), oracles::meteor(cand, &refs));
        ensure((b - ob).abs() < 1e-9, || format!("BLEU {cand:?}/{reference:?}: {b} vs {ob}"))?;
        ensure((m - om).abs() < 1e-9, || format!("METEOR {cand:?}/{reference:?}: {m} vs {om}"))?;
        worst = worst.max((b - ob).abs()).max((m - om).abs());
    }
    Ok(format!("identities on 100 sentences; 50 pairs match oracles (max diff {worst:.1e})"))
}

// ---------------------------------------------------------------- 8

const PHRASES: [&str; 16] = [
    "zebra hide", "copper coils", "feathered wings", "glass shards", "rusty gears", "tangled vines",
    "pebbled shore", "woven baskets", "frosted panes", "spotted fur", "marble veins", "honeycomb cells",
    "paper lanterns", "brick arches", "kelp fronds", "salt crystals",
];
const AUDIT_CLASSES: [&str; 4] = ["lighthouse", "wall clock", "lakeside", "bee eater"];

fn random_mr(rng: &mut ChaCha8Rng) -> MeaningRepresentation {
    let n = rng.random_range(1..=10);
    let mut filters: Vec<usize> = (0..32).collect();
    let mut entries = Vec::new();
    for _ in 0..n {
        let f = filters.swap_remove(rng.random_range(0..filters.len()));
        let cells = CellSet::from_bits(rng.random_range(0u16..512));
        entries.push(NeuronEntry {
            neuron: NeuronId::new(if rng.random_bool(0.8) { "conv3" } else { "conv2" }, f),
            description: PHRASES.choose(rng).unwrap().to_string(),
            positions: simplify_positions(cells),
        });
    }
    MeaningRepresentation::new(*AUDIT_CLASSES.choose(rng).unwrap(), entries).unwrap()
}

fn template_audit() -> Check {
    for a in PHRASES {
        for b in PHRASES {
            ensure(a == b || !a.contains(b), || format!("vocabulary overlap {a}/{b}"))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut omitted, mut invented, mut repeated) = (0, 0, 0);
    for _ in 0..500 {
        let mr = random_mr(&mut rng);
        let text = generate_template(&mr).text;
        for phrase in PHRASES {
            let count = text.matches(phrase).count();
            let present = mr.neurons().iter().any(|e| e.description == phrase);
            match (present, count) {
                (true, 0) => omitted += 1,
                (true, 1) | (false, 0) => {}
                (true, _) => repeated += 1,
                (false, _) => invented += 1,
            }
        }
        ensure(text.contains(&format!("'{}'", mr.predicted_class())), || format!("class missing: {text}"))?;
    }
    ensure(omitted + invented + repeated == 0, || {
        format!("{omitted} omitted, {invented} invented, {repeated} repeated")
    })?;
    Ok("500 MRs: 0 omitted, 0 invented".into())
}

// ---------------------------------------------------------------- 9

const TRICKY: [&str; 6] = ["plain", "quote \" inside", "back\\slash", "tab\there", "ünïcödé ✓", "emoji 🦉 owl"];

fn mr_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let n = rng.random_range(1..=12);
        let entries = (0..n)
            .map(|f| NeuronEntry {
                neuron: NeuronId::new(format!("layer{}", rng.random_range(0..3)), f * 3 + rng.random_range(0..3)),
                description: format!("{} {}", TRICKY.choose(&mut rng).unwrap(), rng.random_range(0..1000)),
                positions: (0..rng.random_range(0..4))
                    .map(|_| *PositionLabel::ALL.choose(&mut rng).unwrap())
                    .collect(),
            })
            .collect();
        let mr = MeaningRepresentation::new(format!("class {i}"), entries).map_err(|e| e.to_string())?;
        let text = serialize_mr(&mr);
        let back = parse_mr(&text).map_err(|e| format!("doc {i}: {e}"))?;
        ensure(back == mr, || format!("doc {i} changed in round trip"))?;
        ensure(serialize_mr(&back) == text, || format!("doc {i} serialization not canonical"))?;
    }

    let ok_neuron = r#"{"description": "d", "filter_index": 0, "layer": "conv3", "positions": ["top"]}"#;
    let doc = |neuron: &str| format!(r#"{{"neurons": [{neuron}], "predicted_class": "c"}}"#);
    let invalid: Vec<String> = vec![
        "".into(),
        "{".into(),
        "[]".into(),
        "{}".into(),
        r#"{"predicted_class": "c"}"#.into(),
        format!(r#"{{"neurons": [{ok_neuron}]}}"#),
        r#"{"neurons": [], "predicted_class": "c"}"#.into(),
        r#"{"neurons": {}, "predicted_class": "c"}"#.into(),
        format!(r#"{{"neurons": [{ok_neuron}], "predicted_class": ""}}"#),
        format!(r#"{{"neurons": [{ok_neuron}], "predicted_class": null}}"#),
        format!(r#"{{"neurons": [{ok_neuron}], "predicted_class": "c", "extra": 1}}"#),
        doc(r#"{"filter_index": 0, "layer": "conv3", "positions": []}"#),
        doc(r#"{"description": "d", "layer": "conv3", "positions": []}"#),
        doc(r#"{"description": "d", "filter_index": -1, "layer": "conv3", "positions": []}"#),
        doc(r#"{"description": "d", "filter_index": 1.5, "layer": "conv3", "positions": []}"#),
        doc(r#"{"description": "d", "filter_index": "3", "layer": "conv3", "positions": []}"#),
        doc(r#"{"description": "d", "filter_index": 0, "layer": 3, "positions": []}"#),
        doc(r#"{"description": "d", "filter_index": 0, "layer": "conv3", "positions": "top"}"#),
        doc(r#"{"description": "d", "filter_index": 0, "layer": "conv3", "positions": ["middle"]}"#),
        doc(r#"{"description": "d", "filter_index": 0, "layer": "conv3", "positions": ["Top"]}"#),
        doc(r#"{"description": "d", "filter_index": 0, "layer": "conv3", "positions": [], "score": 1}"#),
        doc(r#"{"description": "two\nlines", "filter_index": 0, "layer": "conv3", "positions": []}"#),
        doc(r#"{"description": "  ", "filter_index": 0, "layer": "conv3", "positions": []}"#),
        doc(&format!("{ok_neuron}, {ok_neuron}")),
    ];
    ensure(invalid.len() >= 20, || "too few invalid documents".into())?;
    for (i, text) in invalid.iter().enumerate() {
        ensure(parse_mr(text).is_err(), || format!("invalid document {i} accepted: {text}"))?;
    }
    Ok(format!("1000 round trips exact; {} invalid documents rejected", invalid.len()))
}

// ---------------------------------------------------------------- 10

fn mr_with(ids: &[usize]) -> MeaningRepresentation {
    let entries = ids
        .iter()
        .map(|&f| NeuronEntry {
            neuron: NeuronId::new("conv3", f),
            description: format!("d{f}"),
            positions: vec![],
        })
        .collect();
    MeaningRepresentation::new("c", entries).unwrap()
}

fn as_pairs(mr: &MeaningRepresentation) -> Vec<(String, usize)> {
    mr.neurons().iter().map(|e| (e.neuron.layer.clone(), e.neuron.filter_index)).collect()
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_neurotext"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("neurotext {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn divergence_machinery() -> Check {
    let ten: Vec<usize> = (0..10).collect();
    let shared3: Vec<usize> = vec![0, 1, 2, 20, 21, 22, 23, 24, 25, 26];
    for (b, expected) in [(ten.clone(), 0.0), ((10..20).collect::<Vec<_>>(), 1.0), (shared3, 0.7)] {
        let (ma, mb) = (mr_with(&ten), mr_with(&b));
        let got = pipeline_divergence(&ma, &mb).map_err(|e| e.to_string())?;
        ensure(got == expected, || format!("divergence {got} expected {expected}"))?;
        ensure(got == oracles::divergence(&as_pairs(&ma), &as_pairs(&mb)), || "oracle disagrees".into())?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().to_str().unwrap();
    let (model, table) = (model_path(), table_path());
    let (model, table) = (model.to_str().unwrap(), table.to_str().unwrap());
    run_cli(&["--model", model, "--out", out, "make-fixtures", "--images-per-class", "5"])?;
    let replay = dir.path().join("replay.jsonl");
    run_cli(&[
        "--model", model, "--annotations", table, "--annotator", "table", "--no-cache", "--out", out,
        "experiment", "divergence", "--replay", replay.to_str().unwrap(),
    ])?;

    let tsv = fs::read_to_string(dir.path().join("divergence.tsv")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = tsv.lines().collect();
    ensure(lines.len() == 4 && lines[0] == "statistic\tvalue", || format!("unexpected table:\n{tsv}"))?;
    ensure(lines[1].starts_with("mean\t") && lines[2].starts_with("median\t") && lines[3] == "n\t50", || {
        format!("unexpected rows:\n{tsv}")
    })?;
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("divergence.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let fractions: Vec<f64> = doc["divergence"]["fractions"]
        .as_array()
        .ok_or("fractions missing")?
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let (m, med) = (doc["divergence"]["mean"].as_f64().unwrap(), doc["divergence"]["median"].as_f64().unwrap());
    let mut sorted = fractions.clone();
    sorted.sort_by(f64::total_cmp);
    let oracle_median = (sorted[24] + sorted[25]) / 2.0;
    ensure((m - mean(&fractions)).abs() < 1e-12 && med == oracle_median, || "mean/median mismatch".into())?;
    ensure(fractions.iter().all(|f| (0.0..=1.0).contains(f)), || "fraction out of range".into())?;

    // Spot-check one record by recomputing its divergence in process.
    let first: serde_json::Value = serde_json::from_str(
        fs::read_to_string(&replay).map_err(|e| e.to_string())?.lines().next().unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let img = Image::load(&dir.path().join(first["image"].as_str().unwrap())).map_err(|e| e.to_string())?;
    let rect: neurotext::interventions::RectMask = serde_json::from_value(first["cover"][0].clone()).unwrap();
    let covered = neurotext::interventions::apply_rect_masks(&img, &[rect], neurotext::interventions::MaskMode::Cover)
        .map_err(|e| e.to_string())?;
    let pipeline = Pipeline::new(
        model_from(model),
        Box::new(load_annotation_table(Path::new(table)).unwrap()),
        Realizer::Template,
    );
    let (a, b) = (pipeline.analyze(&img).unwrap().mr, pipeline.analyze(&covered).unwrap().mr);
    let expected = oracles::divergence(&as_pairs(&a), &as_pairs(&b));
    ensure(fractions[0] == expected, || format!("record 1: {} vs {expected}", fractions[0]))?;
    Ok(format!("set cases exact; covered-image run: mean {m:.4}, median {med:.4}, n {}", fractions.len()))
}

fn model_from(path: &str) -> Network {
    Network::load(Path::new(path)).unwrap()
}

// ---------------------------------------------------------------- 11

fn end_to_end_golden() -> Check {
    let golden = root().join("assets/fixtures/golden");
    let input = golden.join("input.png");
    let regenerated = synth::sample(FIXTURE_SEED, Split::Fixture, 8, 0).image;
    let shipped = Image::load(&input).map_err(|e| e.to_string())?;
    ensure(shipped.pixels() == regenerated.pixels(), || "golden input differs from the generator".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    run_cli(&[
        "--model", model_path().to_str().unwrap(),
        "--annotations", table_path().to_str().unwrap(),
        "--annotator", "table", "--no-cache",
        "--out", dir.path().to_str().unwrap(),
        "explain", input.to_str().unwrap(),
    ])?;
    let elapsed = start.elapsed().as_secs_f64();
    let read = |p: PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    ensure(read(dir.path().join("mr.json"))? == read(golden.join("mr.json"))?, || "mr.json differs from golden".into())?;
    ensure(
        read(dir.path().join("explanation.txt"))? == read(golden.join("explanation.txt"))?,
        || "explanation.txt differs from golden".into(),
    )?;
    ensure(elapsed < 5.0, || format!("explain took {elapsed:.2} s"))?;
    Ok(format!("golden MR and text byte-identical; {elapsed:.2} s"))
}

// ---------------------------------------------------------------- runner

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!("criterion {id:>2} {tag}  {name}: {detail} [{secs:.1} s]");
    result.is_ok()
}

fn main() {
    let mut results = Vec::new();
    results.push(run(1, "LRP conservation", lrp_conservation));
    results.push(run(2, "spatial rule oracle", spatial_oracle));
    let start = Instant::now();
    let masking = masking_data();
    let masking_secs = start.elapsed().as_secs_f64();
    println!("(masking cohort computed in {masking_secs:.1} s)");
    results.push(run(3, "directional faithfulness", || directional_faithfulness(masking.as_ref()?)));
    results.push(run(4, "cumulative masking trend", || sweep_trend(masking.as_ref()?)));
    results.push(run(5, "stability ordering", stability_ordering));
    results.push(run(6, "perturbation kernel", perturbation_kernel));
    results.push(run(7, "metric identities and oracles", metric_identities));
    results.push(run(8, "template faithfulness audit", template_audit));
    results.push(run(9, "MR round trip and schema", mr_round_trip));
    results.push(run(10, "pipeline divergence", divergence_machinery));
    results.push(run(11, "end-to-end golden explain", end_to_end_golden));
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
