//! Similarity matrices, their CSV form, and the triangle statistic.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mse::Summary;
use crate::error::{Error, Result};
use crate::zoo::ArchSpec;

/// Which of the two networks are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRegime {
    TrainedTrained,
    RandomSender,
    RandomReceiver,
    RandomRandom,
}

impl MatrixRegime {
    pub const ALL: [MatrixRegime; 4] = [
        Self::TrainedTrained,
        Self::RandomSender,
        Self::RandomReceiver,
        Self::RandomRandom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TrainedTrained => "trained_trained",
            Self::RandomSender => "random_sender",
            Self::RandomReceiver => "random_receiver",
            Self::RandomRandom => "random_random",
        }
    }

    pub fn sender_is_random(&self) -> bool {
        matches!(self, Self::RandomSender | Self::RandomRandom)
    }

    pub fn receiver_is_random(&self) -> bool {
        matches!(self, Self::RandomReceiver | Self::RandomRandom)
    }
}

impl fmt::Display for MatrixRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatrixRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown regime {s:?}; expected one of trained_trained, random_sender, random_receiver, random_random")))
    }
}

/// Accuracy grid; `None` marks a hole.
pub type Grid = Vec<Vec<Option<f64>>>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cell {
    pub accuracy: Option<f64>,
    /// Why a cell is a hole.
    pub note: Option<String>,
    /// Run manifest directory for the entry.
    pub manifest: Option<PathBuf>,
}

/// Rows are sender stitch indices `0..=I`, columns receiver indices `0..=J`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub sender: String,
    pub receiver: String,
    pub sender_arch: ArchSpec,
    pub receiver_arch: ArchSpec,
    pub regime: MatrixRegime,
    cells: Vec<Vec<Cell>>,
}

impl SimilarityMatrix {
    pub fn new(
        sender: String,
        sender_arch: ArchSpec,
        receiver: String,
        receiver_arch: ArchSpec,
        regime: MatrixRegime,
    ) -> Self {
        let cells = vec![
            vec![Cell::default(); receiver_arch.num_stitch_points()];
            sender_arch.num_stitch_points()
        ];
        Self {
            sender,
            receiver,
            sender_arch,
            receiver_arch,
            regime,
            cells,
        }
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cols(&self) -> usize {
        self.cells[0].len()
    }

    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, cell: Cell) -> Result<()> {
        if let Some(a) = cell.accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvariantViolation(format!(
                    "accuracy {a} at ({i},{j}) outside [0, 1]"
                )));
            }
        }
        self.cells[i][j] = cell;
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.cells
            .iter()
            .map(|r| r.iter().map(|c| c.accuracy).collect())
            .collect()
    }

    pub fn holes(&self) -> Vec<(usize, usize)> {
        holes(&self.grid())
    }

    /// `<sender>__<receiver>__<regime>`, the file stem used on disk.
    pub fn key(&self) -> String {
        matrix_key(&self.sender, &self.receiver, &self.regime.to_string())
    }
}

pub fn matrix_key(sender: &str, receiver: &str, regime: &str) -> String {
    format!("{sender}__{receiver}__{regime}")
}

pub fn holes(grid: &Grid) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, row) in grid.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if v.is_none() {
                out.push((i, j));
            }
        }
    }
    out
}

pub const CSV_CORNER: &str = "sender\\receiver";
pub const HOLE: &str = "NA";

/// Header of receiver indices, first column of sender indices, cells to
/// four decimals, holes as `NA`.
pub fn matrix_to_csv(grid: &Grid) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let cols = grid.first().map_or(0, Vec::len);
    let mut header = vec![CSV_CORNER.to_string()];
    header.extend((0..cols).map(|j| j.to_string()));
    let csv_err = |e: csv::Error| Error::InvariantViolation(format!("csv encoding: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in grid.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(
            row.iter()
                .map(|v| v.map_or_else(|| HOLE.to_string(), |a| format!("{a:.4}"))),
        );
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvariantViolation(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses [`matrix_to_csv`] output. Errors carry the 1-based line number.
pub fn parse_matrix_csv(text: &str, what: &str) -> Result<Grid> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let perr = |line: u64, reason: String| Error::Parse {
        what: what.to_string(),
        line,
        reason,
    };
    let mut grid: Grid = Vec::new();
    let mut cols = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        match cols {
            None => {
                if rec.len() < 2 {
                    return Err(perr(
                        line,
                        "header needs at least one receiver column".into(),
                    ));
                }
                for (j, field) in rec.iter().skip(1).enumerate() {
                    if field.trim().parse::<usize>().ok() != Some(j) {
                        return Err(perr(
                            line,
                            format!(
                                "header column {} should be receiver index {j}, found {field:?}",
                                j + 1
                            ),
                        ));
                    }
                }
                cols = Some(rec.len() - 1);
            }
            Some(n) => {
                if rec.len() == 1 && rec[0].trim().is_empty() {
                    continue;
                }
                if rec.len() != n + 1 {
                    return Err(perr(
                        line,
                        format!("expected {} fields, found {}", n + 1, rec.len()),
                    ));
                }
                let i = grid.len();
                if rec[0].trim().parse::<usize>().ok() != Some(i) {
                    return Err(perr(
                        line,
                        format!("row label should be sender index {i}, found {:?}", &rec[0]),
                    ));
                }
                let mut row = Vec::with_capacity(n);
                for (j, field) in rec.iter().skip(1).enumerate() {
                    let field = field.trim();
                    if field == HOLE {
                        row.push(None);
                        continue;
                    }
                    let v: f64 = field.parse().map_err(|_| {
                        perr(line, format!("cell ({i},{j}) is not a number: {field:?}"))
                    })?;
                    if !(0.0..=1.0).contains(&v) {
                        return Err(perr(line, format!("cell ({i},{j}) = {v} outside [0, 1]")));
                    }
                    row.push(Some(v));
                }
                grid.push(row);
            }
        }
    }
    if cols.is_none() {
        return Err(perr(1, "empty matrix file".into()));
    }
    if grid.is_empty() {
        return Err(perr(2, "matrix has no rows".into()));
    }
    Ok(grid)
}

/// Lower region membership, `j/J <= i/I`, by integer cross-multiplication.
/// `last_row = I`, `last_col = J`.
pub fn in_lower_region(i: usize, j: usize, last_row: usize, last_col: usize) -> bool {
    j * last_row <= i * last_col
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleStat {
    pub lower_mean: f64,
    pub strict_upper_mean: f64,
    /// `lower_mean - strict_upper_mean`.
    pub gap: f64,
    /// Largest sender index `I`.
    pub last_row: usize,
    /// Largest receiver index `J`.
    pub last_col: usize,
    pub lower_cells: usize,
    pub upper_cells: usize,
}

/// Region means over a complete grid.
pub fn triangle_stat(grid: &Grid) -> Result<TriangleStat> {
    let h = holes(grid);
    if !h.is_empty() {
        return Err(Error::IncompleteMatrix(h));
    }
    triangle_stat_skipping_holes(grid)
}

/// Region means with holes left out, for reporting partial sweeps.
pub fn triangle_stat_skipping_holes(grid: &Grid) -> Result<TriangleStat> {
    let rows = grid.len();
    let cols = grid.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || grid.iter().any(|r| r.len() != cols) {
        return Err(Error::Argument(format!(
            "triangle statistic needs a rectangular grid of at least 2x2, got {rows} rows"
        )));
    }
    let (last_row, last_col) = (rows - 1, cols - 1);
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for (i, row) in grid.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let Some(v) = *v else { continue };
            if in_lower_region(i, j, last_row, last_col) {
                lower.push(v);
            } else {
                upper.push(v);
            }
        }
    }
    if lower.is_empty() || upper.is_empty() {
        return Err(Error::IncompleteMatrix(holes(grid)));
    }
    // Clamped means, so a constant matrix has a gap of exactly zero.
    let lower_mean = Summary::of(lower.iter().copied()).mean;
    let strict_upper_mean = Summary::of(upper.iter().copied()).mean;
    Ok(TriangleStat {
        lower_mean,
        strict_upper_mean,
        gap: lower_mean - strict_upper_mean,
        last_row,
        last_col,
        lower_cells: lower.len(),
        upper_cells: upper.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_example() {
        let grid = vec![vec![Some(1.0), Some(0.0)], vec![Some(1.0), Some(1.0)]];
        let t = triangle_stat(&grid).unwrap();
        assert_eq!((t.lower_mean, t.strict_upper_mean, t.gap), (1.0, 0.0, 1.0));
        assert_eq!((t.lower_cells, t.upper_cells), (3, 1));
    }

    #[test]
    fn constant_grid_has_zero_gap() {
        let grid = vec![vec![Some(0.5); 8]; 6];
        assert_eq!(triangle_stat(&grid).unwrap().gap, 0.0);
    }

    #[test]
    fn holes_are_reported() {
        let mut grid = vec![vec![Some(0.5); 3]; 3];
        grid[1][2] = None;
        grid[2][0] = None;
        match triangle_stat(&grid).unwrap_err() {
            Error::IncompleteMatrix(h) => assert_eq!(h, vec![(1, 2), (2, 0)]),
            e => panic!("{e}"),
        }
        let partial = triangle_stat_skipping_holes(&grid).unwrap();
        assert_eq!(partial.lower_cells + partial.upper_cells, 7);
    }

    #[test]
    fn non_square_membership() {
        // 6x8 grid: I = 5, J = 7. Cell (5, 7) is on the diagonal.
        assert!(in_lower_region(5, 7, 5, 7));
        assert!(in_lower_region(0, 0, 5, 7));
        assert!(!in_lower_region(0, 1, 5, 7));
        assert!(in_lower_region(1, 1, 5, 7));
        assert!(!in_lower_region(1, 2, 5, 7));
    }

    #[test]
    fn csv_round_trip() {
        let grid = vec![
            vec![Some(0.91234), None, Some(0.1)],
            vec![Some(0.0), Some(1.0), Some(0.33333)],
        ];
        let text = matrix_to_csv(&grid).unwrap();
        assert_eq!(text.lines().next().unwrap(), "sender\\receiver,0,1,2");
        assert_eq!(text.lines().nth(1).unwrap(), "0,0.9123,NA,0.1000");
        let back = parse_matrix_csv(&text, "m").unwrap();
        assert_eq!(back[0][0], Some(0.9123));
        assert_eq!(back[0][1], None);
        assert_eq!(back[1][2], Some(0.3333));
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "sender\\receiver,0,1\n0,0.5,0.5\n1,0.5,abc\n";
        match parse_matrix_csv(text, "m.csv").unwrap_err() {
            Error::Parse { line, what, .. } => assert_eq!((line, what.as_str()), (3, "m.csv")),
            e => panic!("{e}"),
        }
        match parse_matrix_csv("sender\\receiver,0,1\n0,0.5\n", "m").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        assert!(parse_matrix_csv("x,0,2\n", "m").is_err());
        assert!(parse_matrix_csv("", "m").is_err());
        assert!(parse_matrix_csv("s,0\n0,1.5\n", "m").is_err());
    }

    #[test]
    fn regime_names() {
        for r in MatrixRegime::ALL {
            assert_eq!(r.to_string().parse::<MatrixRegime>().unwrap(), r);
        }
        assert!("trained".parse::<MatrixRegime>().is_err());
    }
}
