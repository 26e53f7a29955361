//! Fixture loading and brute-force oracles shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn jsonl(name: &str) -> Vec<Value> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

type Entry = (String, f64, f64);

fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        // two identical points
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// Pulls `{major: .., sub: .., ground: [a, b]}` bodies out of a well-formed response.
fn scrape(raw: &str) -> Option<Vec<Entry>> {
    raw.find("</violation>")?;
    let mut out = Vec::new();
    for chunk in raw.split("<result>").skip(1) {
        let body = chunk.split("</result>").next()?;
        let major = body.split("major:").nth(1)?.split(',').next()?.trim().to_string();
        let ground = body.split('[').nth(1)?.split(']').next()?;
        let mut nums = ground.split(',').map(|s| s.trim().parse::<f64>().unwrap());
        out.push((major, nums.next()?, nums.next()?));
    }
    Some(out)
}

fn best_assignment(pred: &[Entry], gt: &[Entry]) -> Vec<f64> {
    // exhaustive search; returns per-gt IoU of the best total assignment
    fn go(i: usize, used: &mut Vec<Option<usize>>, pred: &[Entry], gt: &[Entry], best: &mut (f64, Vec<f64>)) {
        if i == pred.len() {
            let mut per = vec![0.0; gt.len()];
            for (j, slot) in used.iter().enumerate() {
                if let Some(p) = slot {
                    per[j] = iou((pred[*p].1, pred[*p].2), (gt[j].1, gt[j].2));
                }
            }
            let total: f64 = per.iter().sum();
            if total > best.0 {
                *best = (total, per);
            }
            return;
        }
        go(i + 1, used, pred, gt, best);
        for j in 0..gt.len() {
            if used[j].is_none() && pred[i].0 == gt[j].0 {
                used[j] = Some(i);
                go(i + 1, used, pred, gt, best);
                used[j] = None;
            }
        }
    }
    let mut best = (-1.0, vec![0.0; gt.len()]);
    go(0, &mut vec![None; gt.len()], pred, gt, &mut best);
    best.1
}

pub struct OracleReport {
    pub parse_failures: usize,
    /// (tp, fp, fn) per major.
    pub counts: BTreeMap<String, (usize, usize, usize)>,
    pub avg_precision: f64,
    pub avg_recall: f64,
    pub miou: f64,
    pub miou_per_major: BTreeMap<String, f64>,
}

/// Recomputes the evaluation of a predictions/labels fixture pair from scratch.
pub fn oracle(preds: &[Value], labels: &[Value]) -> OracleReport {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut ious: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut failures = 0;
    for label in labels {
        let id = label["id"].as_str().unwrap();
        let raw = preds.iter().find(|p| p["id"] == id).unwrap()["raw"].as_str().unwrap();
        let pred = scrape(raw).unwrap_or_else(|| {
            failures += 1;
            Vec::new()
        });
        let gt: Vec<Entry> = label["results"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                let g = r["ground"].as_array().unwrap();
                (r["major"].as_str().unwrap().to_string(), g[0].as_f64().unwrap(), g[1].as_f64().unwrap())
            })
            .collect();
        let ps: BTreeSet<_> = pred.iter().map(|e| e.0.clone()).collect();
        let gs: BTreeSet<_> = gt.iter().map(|e| e.0.clone()).collect();
        for m in ps.union(&gs) {
            let c = counts.entry(m.clone()).or_default();
            match (ps.contains(m), gs.contains(m)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                _ => c.2 += 1,
            }
        }
        for (e, v) in gt.iter().zip(best_assignment(&pred, &gt)) {
            ious.entry(e.0.clone()).or_default().push(v);
        }
    }
    let present: Vec<_> = counts.values().filter(|c| c.0 + c.2 > 0).collect();
    let precisions: Vec<f64> = present
        .iter()
        .filter(|c| c.0 + c.1 > 0)
        .map(|c| c.0 as f64 / (c.0 + c.1) as f64)
        .collect();
    let recalls: Vec<f64> = present.iter().map(|c| c.0 as f64 / (c.0 + c.2) as f64).collect();
    let all: Vec<f64> = ious.values().flatten().copied().collect();
    OracleReport {
        parse_failures: failures,
        avg_precision: precisions.iter().sum::<f64>() / precisions.len() as f64,
        avg_recall: recalls.iter().sum::<f64>() / recalls.len() as f64,
        miou: all.iter().sum::<f64>() / all.len() as f64,
        miou_per_major: ious.iter().map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64)).collect(),
        counts,
    }
}
