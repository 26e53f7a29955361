mod common;

use std::collections::HashSet;

use vidmod_core::eval_harness::{evaluate, LabelRecord, PredictionRecord};
use vidmod_core::output_format::{format_reward, parse_output, ModerationOutput, ParseFailureKind};

#[test]
fn parser_golden_corpus() {
    let lines = common::jsonl("parser_golden.jsonl");
    let mut valid = 0;
    let mut kinds = HashSet::new();
    for (n, line) in lines.iter().enumerate() {
        let raw = line["raw"].as_str().unwrap();
        let expect = line["expect"].as_str().unwrap();
        let parsed = parse_output(raw);
        match (expect, &parsed) {
            ("ok", Ok(o)) => {
                valid += 1;
                assert_eq!(o.violation, line["violation"].as_bool().unwrap(), "line {n}");
                assert_eq!(o.results.len() as u64, line["results"].as_u64().unwrap(), "line {n}");
                assert_eq!(format_reward(raw), 1.0);
            }
            (kind, Err(f)) if kind == f.kind.as_str() => {
                kinds.insert(f.kind);
                assert!(f.offset <= raw.len());
                assert_eq!(format_reward(raw), 0.0);
            }
            _ => panic!("line {n}: expected {expect}, got {parsed:?}"),
        }
    }
    assert!(lines.len() >= 30 && valid >= 15 && lines.len() - valid >= 15);
    assert_eq!(kinds, ParseFailureKind::ALL.into_iter().collect());
}

#[test]
fn eval_fixture_matches_oracle_and_hand_counts() {
    let preds = common::jsonl("eval_preds.jsonl");
    let labels = common::jsonl("eval_labels.jsonl");
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(common::fixture("eval_expected.json")).unwrap()).unwrap();

    let mut outputs = Vec::new();
    let mut gts = Vec::new();
    let mut failures = 0;
    for l in &labels {
        let label: LabelRecord = serde_json::from_value(l.clone()).unwrap();
        let pred: PredictionRecord = serde_json::from_value(
            preds.iter().find(|p| p["id"] == l["id"]).unwrap().clone(),
        )
        .unwrap();
        outputs.push(parse_output(&pred.raw).unwrap_or_else(|_| {
            failures += 1;
            ModerationOutput::empty()
        }));
        gts.push(label.to_ground_truth().unwrap());
    }
    let report = evaluate(&outputs, &gts, failures).unwrap();
    let oracle = common::oracle(&preds, &labels);

    assert_eq!(report.parse_failures, oracle.parse_failures);
    assert_eq!(report.parse_failures as u64, expected["parse_failures"].as_u64().unwrap());
    for (major, e) in &report.per_major {
        assert_eq!((e.tp, e.fp, e.fn_), oracle.counts[major]);
        let hand = &expected["per_major"][major];
        assert_eq!(e.tp as u64, hand["tp"].as_u64().unwrap());
        assert_eq!(e.fp as u64, hand["fp"].as_u64().unwrap());
        assert_eq!(e.fn_ as u64, hand["fn"].as_u64().unwrap());
    }
    assert_eq!(report.per_major.len(), oracle.counts.len());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
    assert!(close(report.avg_precision.unwrap(), oracle.avg_precision));
    assert!(close(report.avg_recall.unwrap(), oracle.avg_recall));
    assert!(close(report.avg_precision.unwrap(), expected["avg_precision"].as_f64().unwrap()));
    assert!(close(report.avg_recall.unwrap(), expected["avg_recall"].as_f64().unwrap()));
    let hand_miou = expected["miou_num"].as_f64().unwrap() / expected["miou_den"].as_f64().unwrap();
    assert!(close(report.miou.unwrap(), oracle.miou));
    assert!(close(report.miou.unwrap(), hand_miou));
    for (major, v) in &report.miou_per_major {
        assert!(close(*v, oracle.miou_per_major[major]));
        assert!(close(*v, expected["miou_per_major"][major].as_f64().unwrap()));
    }
}
