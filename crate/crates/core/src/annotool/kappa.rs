use crate::error::{Error, Result};

/// Fleiss' kappa of an `items x categories` count table with a constant number of raters per item.
pub fn fleiss_kappa(table: &[Vec<usize>]) -> Result<f64> {
    let first = table.first().ok_or(Error::Empty("kappa table"))?;
    let k = first.len();
    let r: usize = first.iter().sum();
    if k == 0 {
        return Err(Error::Empty("kappa categories"));
    }
    if r < 2 {
        return Err(Error::invalid(
            "fleiss_kappa",
            "at least two raters per item are required",
        ));
    }
    for (i, row) in table.iter().enumerate() {
        if row.len() != k || row.iter().sum::<usize>() != r {
            return Err(Error::invalid(
                "fleiss_kappa",
                format!("row {i} does not have {k} categories summing to {r} raters"),
            ));
        }
    }
    let n = table.len() as f64;
    let rf = r as f64;
    let mut p_bar = 0.0;
    let mut col = vec![0usize; k];
    for row in table {
        let agree: usize = row.iter().map(|&c| c * c.saturating_sub(1)).sum();
        p_bar += agree as f64 / (rf * (rf - 1.0));
        for (j, &c) in row.iter().enumerate() {
            col[j] += c;
        }
    }
    p_bar /= n;
    let p_e: f64 = col.iter().map(|&c| (c as f64 / (n * rf)).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Undefined("kappa: every rating falls in one category".into()));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Count table from per-item rating lists over `categories` labels.
pub fn count_table(ratings: &[Vec<usize>], categories: usize) -> Result<Vec<Vec<usize>>> {
    ratings
        .iter()
        .map(|item| {
            let mut row = vec![0; categories];
            for &c in item {
                *row.get_mut(c)
                    .ok_or_else(|| Error::invalid("count_table", format!("category {c} outside 0..{categories}")))? +=
                    1;
            }
            Ok(row)
        })
        .collect()
}
