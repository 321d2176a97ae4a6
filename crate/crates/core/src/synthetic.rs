//! A synthetic tabular generator with planted structure: correlated
//! discrete/continuous features, a bimodal continuous column, and labels that
//! leak the sensitive attributes. Regular training on it is measurably unfair
//! to comparable pairs, which makes it a self-contained benchmark for the
//! whole pipeline and for convergence checks.

use crate::data::RawTable;
use crate::schema::{
    CategoricalColumn, ContinuousColumn, FeatureSchema, IngestOptions, LabelColumn,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn schema() -> FeatureSchema {
    FeatureSchema {
        version: 1,
        ingest: IngestOptions::default(),
        label: LabelColumn { name: "outcome".into(), positive: vec!["yes".into()] },
        sensitive: vec![
            CategoricalColumn { name: "group".into(), values: vec!["a".into(), "b".into()] },
            CategoricalColumn { name: "band".into(), values: vec!["k".into(), "l".into()] },
        ],
        discrete: vec![
            CategoricalColumn {
                name: "track".into(),
                values: vec!["p".into(), "q".into(), "r".into()],
            },
            CategoricalColumn { name: "shift".into(), values: vec!["u".into(), "v".into()] },
            CategoricalColumn { name: "region".into(), values: vec!["m".into(), "n".into()] },
        ],
        continuous: vec![
            ContinuousColumn { name: "score".into(), min: 0.0, max: 60.0 },
            ContinuousColumn { name: "hours".into(), min: 0.0, max: 100.0 },
        ],
    }
}

/// Sample `rows` records. The data-generating process ties `score` to the
/// `track` feature (two well-separated modes) and leaks both sensitive
/// attributes into the label.
pub fn generate(rows: usize, seed: u64) -> RawTable {
    let mut rng = crate::rng::stream(seed, "synthetic");
    let lo = Normal::new(20.0, 2.0).unwrap();
    let hi = Normal::new(40.0, 2.0).unwrap();
    let hours_base = Normal::new(50.0, 8.0).unwrap();

    let mut table = RawTable {
        continuous: vec![Vec::with_capacity(rows), Vec::with_capacity(rows)],
        discrete: vec![Vec::with_capacity(rows); 3],
        sensitive: vec![Vec::with_capacity(rows); 2],
        labels: Vec::with_capacity(rows),
        dropped_rows: 0,
    };

    for _ in 0..rows {
        let group = u32::from(rng.gen::<f64>() < 0.5);
        let band = u32::from(rng.gen::<f64>() < 0.4);
        // Track distribution shifts with the group.
        let track = {
            let u: f64 = rng.gen();
            let cut = if group == 0 { (0.5, 0.8) } else { (0.3, 0.6) };
            if u < cut.0 {
                0
            } else if u < cut.1 {
                1
            } else {
                2
            }
        };
        let shift = u32::from(rng.gen::<f64>() < 0.5);
        let region = u32::from(rng.gen::<f64>() < 0.3);
        let raw_score: f64 =
            if track == 0 { lo.sample(&mut rng) } else { hi.sample(&mut rng) };
        let score = raw_score.clamp(0.0, 60.0);
        let raw_hours: f64 = hours_base.sample(&mut rng);
        let hours = (raw_hours + 6.0 * group as f64).clamp(0.0, 100.0);

        let logit = 0.10 * (score - 30.0) + 0.06 * (hours - 52.0) + 1.6 * group as f64
            - 0.8 * band as f64
            + 0.3 * (track == 2) as u8 as f64
            - 0.2 * shift as f64;
        let p = 1.0 / (1.0 + (-logit).exp());
        let y = u8::from(rng.gen::<f64>() < p);

        table.continuous[0].push(score);
        table.continuous[1].push(hours);
        table.discrete[0].push(track);
        table.discrete[1].push(shift);
        table.discrete[2].push(region);
        table.sensitive[0].push(group);
        table.sensitive[1].push(band);
        table.labels.push(y);
    }
    table
}

/// Render a raw table back to CSV text under a schema (header + rows), for
/// writing test and demo fixtures.
pub fn to_csv_string(raw: &RawTable, schema: &FeatureSchema) -> String {
    let mut header: Vec<String> = Vec::new();
    header.extend(schema.continuous.iter().map(|c| c.name.clone()));
    header.extend(schema.discrete.iter().map(|c| c.name.clone()));
    header.extend(schema.sensitive.iter().map(|c| c.name.clone()));
    header.push(schema.label.name.clone());
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..raw.n_rows() {
        let mut fields: Vec<String> = Vec::new();
        for col in &raw.continuous {
            fields.push(format!("{}", col[i]));
        }
        for (f, col) in raw.discrete.iter().enumerate() {
            fields.push(schema.discrete[f].values[col[i] as usize].clone());
        }
        for (f, col) in raw.sensitive.iter().enumerate() {
            fields.push(schema.sensitive[f].values[col[i] as usize].clone());
        }
        fields.push(if raw.labels[i] == 1 {
            schema.label.positive[0].clone()
        } else {
            "no".to_string()
        });
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparability::{mine_pairs, ComparabilityConfig};
    use crate::data::{encode_train, load_dataset_from_reader};

    #[test]
    fn generates_both_labels_and_valid_codes() {
        let raw = generate(500, 0);
        assert_eq!(raw.n_rows(), 500);
        assert!(raw.labels.iter().any(|&y| y == 1));
        assert!(raw.labels.iter().any(|&y| y == 0));
        assert!(raw.discrete[0].iter().all(|&v| v < 3));
        assert!(raw.sensitive[0].iter().all(|&v| v < 2));
    }

    #[test]
    fn yields_plenty_of_comparable_pairs() {
        let raw = generate(1000, 1);
        let (ds, _) = encode_train(&raw, &schema());
        let pairs = mine_pairs(&ds, &ComparabilityConfig { t_d: 1, t_c: 0.05 }).unwrap();
        assert!(pairs.len() > 500, "only {} pairs", pairs.len());
    }

    #[test]
    fn csv_rendering_roundtrips_through_ingestion() {
        let raw = generate(200, 2);
        let s = schema();
        let text = to_csv_string(&raw, &s);
        let back = load_dataset_from_reader(text.as_bytes(), &s).unwrap();
        assert_eq!(back.n_rows(), 200);
        assert_eq!(back.labels, raw.labels);
        assert_eq!(back.discrete, raw.discrete);
        assert_eq!(back.sensitive, raw.sensitive);
    }
}
