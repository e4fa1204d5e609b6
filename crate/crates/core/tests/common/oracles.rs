//! Brute-force reference implementations used by the integration and
//! acceptance tests. Written for clarity rather than speed and kept
//! structurally different from the library code they check.

#![allow(dead_code)]

use neurotext::net::{LayerOp, Network};
use neurotext::ActivationStore;
use rust_stemmers::{Algorithm, Stemmer};

// ---------------------------------------------------------------- LRP

fn stab(z: f64) -> f64 {
    if z >= 0.0 {
        z + 1e-9
    } else {
        z - 1e-9
    }
}

/// Relevance at the input of every layer, gathered per lower neuron.
/// Entry 0 is the input image, entry `i` the input of layer `i`, and the
/// last entry the seeded logits.
pub fn lrp(net: &Network, acts: &ActivationStore, target: usize) -> Vec<Vec<f64>> {
    let n = net.layers().len();
    let logits = acts.logits();
    let mut upper: Vec<f64> = (0..logits.len())
        .map(|c| if c == target { logits[c] as f64 } else { 0.0 })
        .collect();
    let mut out = vec![upper.clone()];
    for li in (0..n).rev() {
        let layer = &net.layers()[li];
        let input = acts.layer_input(li);
        let a: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
        let shape = input.shape().to_vec();
        let lower = match &layer.op {
            LayerOp::Relu | LayerOp::Flatten => upper.clone(),
            LayerOp::Dense(d) => {
                let z: Vec<f64> = (0..d.out_features)
                    .map(|j| d.bias[j] as f64 + (0..d.in_features).map(|i| a[i] * d.weight[j * d.in_features + i] as f64).sum::<f64>())
                    .collect();
                (0..d.in_features)
                    .map(|i| {
                        (0..d.out_features)
                            .map(|j| a[i] * d.weight[j * d.in_features + i] as f64 * upper[j] / stab(z[j]))
                            .sum()
                    })
                    .collect()
            }
            LayerOp::Conv2d(c) => {
                let (ch, h, w) = (shape[0], shape[1], shape[2]);
                let (k, s, p) = (c.kernel as i64, c.stride as i64, c.padding as i64);
                let oh = ((h as i64 + 2 * p - k) / s + 1) as usize;
                let ow = ((w as i64 + 2 * p - k) / s + 1) as usize;
                let at = |ci: usize, y: i64, x: i64| -> f64 {
                    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                        0.0
                    } else {
                        a[(ci * h + y as usize) * w + x as usize]
                    }
                };
                let wt = |o: usize, ci: usize, ky: i64, kx: i64| {
                    c.weight[((o * ch + ci) * c.kernel + ky as usize) * c.kernel + kx as usize] as f64
                };
                let mut z = vec![0.0; c.out_channels * oh * ow];
                for o in 0..c.out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = c.bias[o] as f64;
                            for ci in 0..ch {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        acc += at(ci, oy as i64 * s + ky - p, ox as i64 * s + kx - p) * wt(o, ci, ky, kx);
                                    }
                                }
                            }
                            z[(o * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                let mut lower = vec![0.0; ch * h * w];
                for ci in 0..ch {
                    for iy in 0..h as i64 {
                        for ix in 0..w as i64 {
                            let mut acc = 0.0;
                            for o in 0..c.out_channels {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let (ny, nx) = (iy + p - ky, ix + p - kx);
                                        if ny % s != 0 || nx % s != 0 || ny < 0 || nx < 0 {
                                            continue;
                                        }
                                        let (oy, ox) = ((ny / s) as usize, (nx / s) as usize);
                                        if oy >= oh || ox >= ow {
                                            continue;
                                        }
                                        let j = (o * oh + oy) * ow + ox;
                                        acc += wt(o, ci, ky, kx) * upper[j] / stab(z[j]);
                                    }
                                }
                            }
                            lower[(ci * h + iy as usize) * w + ix as usize] = at(ci, iy, ix) * acc;
                        }
                    }
                }
                lower
            }
            LayerOp::MaxPool(pool) | LayerOp::AvgPool(pool) => {
                let is_max = matches!(layer.op, LayerOp::MaxPool(_));
                let (ch, h, w) = (shape[0], shape[1], shape[2]);
                let oh = (h - pool.size) / pool.stride + 1;
                let ow = (w - pool.size) / pool.stride + 1;
                let mut lower = vec![0.0; ch * h * w];
                for ci in 0..ch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let window: Vec<usize> = (0..pool.size * pool.size)
                                .map(|t| (ci * h + oy * pool.stride + t / pool.size) * w + ox * pool.stride + t % pool.size)
                                .collect();
                            let r = upper[(ci * oh + oy) * ow + ox];
                            if is_max {
                                let mut win = window[0];
                                for &i in &window {
                                    if input.data()[i] > input.data()[win] {
                                        win = i;
                                    }
                                }
                                lower[win] += r;
                            } else {
                                let total: f64 = window.iter().map(|&i| a[i]).sum();
                                for &i in &window {
                                    lower[i] += a[i] * r / stab(total);
                                }
                            }
                        }
                    }
                }
                lower
            }
        };
        upper = lower;
        out.push(upper.clone());
    }
    out.reverse();
    out
}

/// Per-filter sums of a `[channels, h, w]` relevance tensor.
pub fn filter_sums(values: &[f64], channels: usize) -> Vec<f64> {
    let per = values.len() / channels;
    (0..channels)
        .map(|c| {
            let mut s = 0.0;
            for i in 0..per {
                s += values[c * per + i];
            }
            s
        })
        .collect()
}

/// Indices of the `k` largest scores, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    for i in 0..idx.len() {
        for j in 0..idx.len() - 1 - i {
            let (a, b) = (idx[j], idx[j + 1]);
            if scores[b] > scores[a] || (scores[b] == scores[a] && b < a) {
                idx.swap(j, j + 1);
            }
        }
    }
    idx.truncate(k);
    idx
}

// ------------------------------------------------------------ spatial

const NAMES: [&str; 9] = [
    "top-left corner",
    "top",
    "top-right corner",
    "left",
    "center",
    "right",
    "bottom-left corner",
    "bottom",
    "bottom-right corner",
];

/// Compound labels as a textual picture of the grid ('#' = required).
const PICTURES: [(&str, &str); 10] = [
    ("entire top", "### ... ..."),
    ("entire bottom", "... ... ###"),
    ("entire left", "#.. #.. #.."),
    ("entire right", "..# ..# ..#"),
    ("perimeter", "### #.# ###"),
    ("center cross", ".#. ### .#."),
    ("upper half", "### ### ..."),
    ("lower half", "... ### ###"),
    ("left half", "##. ##. ##."),
    ("right half", ".## .## .##"),
];

fn picture_cells(picture: &str) -> Vec<usize> {
    picture
        .chars()
        .filter(|c| *c != ' ')
        .enumerate()
        .filter(|(_, c)| *c == '#')
        .map(|(i, _)| i)
        .collect()
}

/// Position labels for a set of active grid cells.
pub fn positions(active: &[bool; 9]) -> Vec<String> {
    let count = active.iter().filter(|b| **b).count();
    if count >= 7 {
        return vec!["entire image".to_string()];
    }
    let mut found: Vec<&str> = PICTURES
        .iter()
        .filter(|(_, pic)| picture_cells(pic).iter().all(|&c| active[c]))
        .map(|(name, _)| *name)
        .collect();
    for (edge, half) in [
        ("entire top", "upper half"),
        ("entire bottom", "lower half"),
        ("entire left", "left half"),
        ("entire right", "right half"),
    ] {
        if found.contains(&edge) && found.contains(&half) {
            found.retain(|n| *n != edge);
        }
    }
    let mut covered = [false; 9];
    for name in &found {
        let pic = PICTURES.iter().find(|(n, _)| n == name).unwrap().1;
        for c in picture_cells(pic) {
            covered[c] = true;
        }
    }
    let mut out: Vec<String> = found.iter().map(|s| s.to_string()).collect();
    for c in 0..9 {
        if active[c] && !covered[c] {
            out.push(NAMES[c].to_string());
        }
    }
    out
}

// ------------------------------------------------------------ metrics

pub fn tokens(text: &str) -> Vec<String> {
    let mut cleaned = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            cleaned.push(' ');
        } else if ch.is_alphanumeric() {
            for l in ch.to_lowercase() {
                cleaned.push(l);
            }
        }
    }
    cleaned.split(' ').filter(|t| !t.is_empty()).map(String::from).collect()
}

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        out.push(tokens[i..i + n].to_vec());
        i += 1;
    }
    out
}

fn occurrences(list: &[Vec<String>], gram: &[String]) -> usize {
    list.iter().filter(|g| g.as_slice() == gram).count()
}

/// Corpus BLEU (0..100), four n-gram orders, add-one smoothing above
/// unigrams, closest-reference brevity penalty.
pub fn bleu(pairs: &[(String, Vec<String>)]) -> f64 {
    let mut hit = [0f64; 4];
    let mut tot = [0f64; 4];
    let (mut c_len, mut r_len) = (0f64, 0f64);
    for (cand, refs) in pairs {
        let c = tokens(cand);
        let rs: Vec<Vec<String>> = refs.iter().map(|r| tokens(r)).collect();
        c_len += c.len() as f64;
        let mut best = rs[0].len();
        for r in &rs {
            let (d, bd) = (r.len().abs_diff(c.len()), best.abs_diff(c.len()));
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        r_len += best as f64;
        for n in 1..=4 {
            let cg = grams(&c, n);
            tot[n - 1] += cg.len() as f64;
            let mut seen: Vec<Vec<String>> = Vec::new();
            for g in &cg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                let mut max_ref = 0;
                for r in &rs {
                    max_ref = max_ref.max(occurrences(&grams(r, n), g));
                }
                hit[n - 1] += occurrences(&cg, g).min(max_ref) as f64;
            }
        }
    }
    if hit[0] == 0.0 {
        return 0.0;
    }
    let mut p = hit[0] / tot[0];
    for n in 1..4 {
        p *= (hit[n] + 1.0) / (tot[n] + 1.0);
    }
    let bp = if c_len >= r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    100.0 * bp * p.powf(0.25)
}

fn same_word(stemmer: &Stemmer, a: &str, b: &str) -> bool {
    a == b || stemmer.stem(a) == stemmer.stem(b)
}

/// Enumerates every one-to-one alignment and returns the best
/// `(matches, chunks)`: most matches, then fewest chunks.
pub fn best_alignment(cand: &[String], reference: &[String]) -> (usize, usize) {
    let stemmer = Stemmer::create(Algorithm::English);
    let mut best = (0usize, 0usize);
    let mut used = vec![false; reference.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    fn walk(
        i: usize,
        cand: &[String],
        reference: &[String],
        stemmer: &Stemmer,
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == cand.len() {
            let m = pairs.len();
            let mut chunks = 0;
            for t in 0..m {
                if t == 0 || pairs[t].0 != pairs[t - 1].0 + 1 || pairs[t].1 != pairs[t - 1].1 + 1 {
                    chunks += 1;
                }
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        walk(i + 1, cand, reference, stemmer, used, pairs, best);
        for j in 0..reference.len() {
            if !used[j] && same_word(stemmer, &cand[i], &reference[j]) {
                used[j] = true;
                pairs.push((i, j));
                walk(i + 1, cand, reference, stemmer, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    walk(0, cand, reference, &stemmer, &mut used, &mut pairs, &mut best);
    best
}

/// Sentence METEOR, best over references.
pub fn meteor(cand: &str, refs: &[String]) -> f64 {
    let c = tokens(cand);
    let mut top = 0.0f64;
    for r in refs {
        let rt = tokens(r);
        if rt.is_empty() {
            continue;
        }
        let (m, ch) = best_alignment(&c, &rt);
        if m == 0 {
            continue;
        }
        let p = m as f64 / c.len() as f64;
        let rc = m as f64 / rt.len() as f64;
        let f = 10.0 * p * rc / (rc + 9.0 * p);
        let frag = if m > 1 { (ch as f64 - 1.0) / (m as f64 - 1.0) } else { 0.0 };
        top = top.max(f * (1.0 - 0.5 * frag * frag * frag));
    }
    top
}

// ----------------------------------------------------------- divergence

/// Fraction of `a` absent from `b`, by plain list scanning.
pub fn divergence(a: &[(String, usize)], b: &[(String, usize)]) -> f64 {
    let missing = a.iter().filter(|x| !b.iter().any(|y| y == *x)).count();
    missing as f64 / a.len() as f64
}
