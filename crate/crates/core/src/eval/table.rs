use std::collections::{BTreeMap, BTreeSet};

use super::{method_of, CostRow, ScoreRow};

/// A rectangular table of formatted cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.headers)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        let bytes = writer.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Markdown with columns padded to equal width. The first column is
    /// left-aligned, the rest right-aligned.
    pub fn to_markdown(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|i| {
                std::iter::once(&self.headers[i])
                    .chain(self.rows.iter().map(|r| &r[i]))
                    .map(|c| c.chars().count())
                    .max()
                    .unwrap_or(0)
                    .max(3)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let rule: Vec<String> =
            widths.iter().enumerate().map(|(i, w)| if i == 0 { format!(":{}", "-".repeat(w - 1)) } else { format!("{}:", "-".repeat(w - 1)) }).collect();
        let mut out = line(&self.headers);
        out.push_str(&format!("| {} |\n", rule.join(" | ")));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }
}

/// `80000` as `80k`; values that are not whole thousands stay as they are.
pub fn format_tokens(n: usize) -> String {
    if n >= 1000 && n % 1000 == 0 {
        format!("{}k", n / 1000)
    } else {
        n.to_string()
    }
}

fn percent(score: f64) -> String {
    format!("{:.1}", score * 100.0)
}

fn method_order(label: &str) -> (usize, String) {
    let rank = method_of(label).map(|m| m as usize).unwrap_or(usize::MAX);
    (rank, label.to_owned())
}

/// Pivots `(row, column) -> cell` into a table, leaving missing cells empty.
fn pivot<R: Ord + Clone, C: Ord + Clone>(
    corner: Vec<String>,
    cells: BTreeMap<(R, C), String>,
    row_label: impl Fn(&R) -> Vec<String>,
    column_label: impl Fn(&C) -> String,
) -> Table {
    let columns: BTreeSet<C> = cells.keys().map(|(_, c)| c.clone()).collect();
    let mut headers = corner;
    headers.extend(columns.iter().map(&column_label));
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut current: Option<&R> = None;
    for ((r, _), _) in &cells {
        if current != Some(r) {
            current = Some(r);
            let mut row = row_label(r);
            row.extend(columns.iter().map(|c| cells.get(&(r.clone(), c.clone())).cloned().unwrap_or_default()));
            rows.push(row);
        }
    }
    Table { headers, rows }
}

/// Scores with one row per method and one column per document length.
pub fn score_table(rows: &[ScoreRow]) -> Table {
    let cells = rows.iter().filter(|r| r.x.is_none() && r.c.is_none()).map(|r| ((method_order(&r.method), r.d), percent(r.score))).collect();
    pivot(vec!["method".into()], cells, |(_, label)| vec![label.clone()], |d| format_tokens(*d))
}

/// Scores of chunked runs with one row per chunk size and one column per
/// method.
pub fn chunk_table(rows: &[ScoreRow]) -> Table {
    let cells = rows
        .iter()
        .filter(|r| r.x.is_none())
        .filter_map(|r| {
            let c = r.c?;
            let method = r.method.replace(&format!("-c{c}"), "");
            Some((((r.d, c), method_order(&method)), percent(r.score)))
        })
        .collect();
    pivot(vec!["d".into(), "c".into()], cells, |(d, c)| vec![format_tokens(*d), format_tokens(*c)], |(_, m)| m.clone())
}

/// Scores by answer position for one document length: one row per method,
/// one column per position.
pub fn position_table(rows: &[ScoreRow], d: usize) -> Table {
    let cells = rows
        .iter()
        .filter(|r| r.d == d)
        .filter_map(|r| Some(((method_order(&r.method), r.x?), percent(r.score))))
        .collect();
    pivot(vec!["method".into()], cells, |(_, label)| vec![label.clone()], |x| format_tokens(*x))
}

/// Calls and mean token usage per configuration.
pub fn cost_table(rows: &[CostRow]) -> Table {
    let mut sorted: Vec<&CostRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (method_order(&r.method), r.c, r.d));
    Table {
        headers: ["method", "c", "d", "m", "input tokens", "output tokens", "n"].map(String::from).to_vec(),
        rows: sorted
            .into_iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.c.map(format_tokens).unwrap_or_else(|| "-".into()),
                    format_tokens(r.d),
                    r.m.to_string(),
                    format!("{:.0}", r.mean_input_tokens),
                    format!("{:.1}", r.mean_output_tokens),
                    r.n.to_string(),
                ]
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, c: Option<usize>, d: usize, x: Option<usize>, score: f64) -> ScoreRow {
        ScoreRow { dataset: "nq".into(), method: method.into(), c, d, x, score, n: 10 }
    }

    #[test]
    fn method_by_length_grid() {
        let mut rows = Vec::new();
        for m in ["rr", "baseline", "icr"] {
            for d in [10_000, 20_000, 40_000] {
                rows.push(row(m, None, d, None, 0.5));
            }
        }
        let t = score_table(&rows);
        assert_eq!(t.headers, vec!["method", "10k", "20k", "40k"]);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0][0], "baseline");
        assert_eq!(t.rows[2][0], "rr");
        assert_eq!(t.rows.iter().map(|r| r.len() - 1).sum::<usize>(), 9);
    }

    #[test]
    fn breakdown_has_a_column_per_position() {
        let rows: Vec<ScoreRow> = (0..=8).map(|i| row("baseline", None, 80_000, Some(i * 10_000), 1.0)).collect();
        let t = position_table(&rows, 80_000);
        assert_eq!(t.headers.len(), 1 + 9);
        assert_eq!(t.headers[1], "0");
        assert_eq!(t.headers[9], "80k");
    }

    #[test]
    fn chunk_grid_strips_chunk_suffix() {
        let rows = vec![
            row("chunked-icr-c10000", Some(10_000), 80_000, None, 0.25),
            row("chunked-rr-c10000", Some(10_000), 80_000, None, 0.5),
            row("chunked-rr-c20000", Some(20_000), 80_000, None, 0.75),
        ];
        let t = chunk_table(&rows);
        assert_eq!(t.headers, vec!["d", "c", "chunked-icr", "chunked-rr"]);
        assert_eq!(t.rows, vec![vec!["80k", "10k", "25.0", "50.0"], vec!["80k", "20k", "", "75.0"]]);
    }

    #[test]
    fn renderings() {
        let t = Table { headers: vec!["method".into(), "10k".into()], rows: vec![vec!["baseline".into(), "50.0".into()]] };
        assert_eq!(t.to_csv().unwrap(), "method,10k\nbaseline,50.0\n");
        assert_eq!(t.to_markdown(), "| method   |  10k |\n| :------- | ---: |\n| baseline | 50.0 |\n");
    }
}
