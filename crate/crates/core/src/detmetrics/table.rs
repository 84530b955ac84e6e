use super::EvalReport;

pub const TABLE_HEADER: [&str; 8] = [
    "Model",
    "Test Dataset",
    "mAP",
    "AP@[.50:.05:.95]",
    "APm",
    "APl",
    "ARm",
    "ARl",
];

/// Three decimals, or `__` for an absent value.
pub fn format_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.3}"),
        None => "__".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow<'a> {
    pub model: &'a str,
    pub dataset: &'a str,
    pub report: &'a EvalReport,
}

impl TableRow<'_> {
    pub fn cells(&self) -> [String; 8] {
        let r = self.report;
        [
            self.model.to_string(),
            self.dataset.to_string(),
            format_metric(Some(r.map50)),
            format_metric(Some(r.ap_5095)),
            format_metric(r.ap_medium),
            format_metric(r.ap_large),
            format_metric(r.ar_medium),
            format_metric(r.ar_large),
        ]
    }
}

/// Fixed-width plain-text table, columns separated by two spaces.
pub fn render_table(rows: &[TableRow]) -> String {
    let cells: Vec<[String; 8]> = rows.iter().map(TableRow::cells).collect();
    let mut width = TABLE_HEADER.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |items: &[String]| {
        let parts: Vec<String> = items.iter().zip(width).map(|(s, w)| format!("{s:<w$}")).collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(&TABLE_HEADER.map(String::from));
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(ap_medium: Option<f64>) -> EvalReport {
        EvalReport {
            map50: 1.0,
            ap_5095: 0.93,
            ap_medium,
            ap_large: Some(0.93),
            ar_medium: None,
            ar_large: Some(0.96),
            num_images: 10,
            num_truths: 10,
            num_detections: 10,
            per_class: vec![],
        }
    }

    #[test]
    fn absent_buckets_render_as_underscores() {
        let r = report(None);
        let text = render_table(&[TableRow {
            model: "fed",
            dataset: "cross_test",
            report: &r,
        }]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let fields: Vec<&str> = lines[2].split_whitespace().collect();
        assert_eq!(
            fields,
            ["fed", "cross_test", "1.000", "0.930", "__", "0.930", "__", "0.960"]
        );
        assert!(lines[0].starts_with("Model"));
    }

    #[test]
    fn columns_align() {
        let (a, b) = (report(Some(0.5)), report(None));
        let text = render_table(&[
            TableRow {
                model: "a-long-model-name",
                dataset: "x",
                report: &a,
            },
            TableRow {
                model: "b",
                dataset: "y",
                report: &b,
            },
        ]);
        let lines: Vec<&str> = text.lines().collect();
        let col = lines[0].find("mAP").unwrap();
        assert_eq!(&lines[2][col..col + 5], "1.000");
        assert_eq!(&lines[3][col..col + 5], "1.000");
    }
}
