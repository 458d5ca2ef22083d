//! File formats: LFGF grid files, CSV point lists and SVG heatmaps.

use crate::error::{Error, Result};
use crate::func::LipFn;
use rayon::prelude::*;
use std::fmt::Write as _;

pub const GRID_MAGIC: &[u8; 4] = b"LFGF";
pub const GRID_VERSION: u16 = 1;
/// Largest accepted payload (values), guards allocation on untrusted input.
pub const GRID_MAX_VALUES: usize = 1 << 28;

/// Sampled map on a node grid over a box.
///
/// Byte layout, all little-endian: magic `LFGF`, version u16, d u16,
/// d × u32 axis sizes, d × f64 lower corner, d × f64 upper corner,
/// codomain l u32, then l·∏dims f64 samples in row-major order (last axis
/// fastest, the l components of a node adjacent).
#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    pub dims: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub codomain: usize,
    pub values: Vec<f64>,
}

fn grid_err(msg: impl Into<String>) -> Error {
    Error::Parse(format!("LFGF: {}", msg.into()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| grid_err("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl GridFile {
    /// Node coordinates of flat node index `i`.
    pub fn node(&self, mut i: usize) -> Vec<f64> {
        let d = self.dims.len();
        let mut x = vec![0.0; d];
        for a in (0..d).rev() {
            let n = self.dims[a];
            let k = i % n;
            i /= n;
            x[a] = self.lo[a] + (self.hi[a] - self.lo[a]) * k as f64 / (n - 1) as f64;
        }
        x
    }

    pub fn nodes(&self) -> usize {
        self.dims.iter().product()
    }

    /// Samples `f` at the nodes of the grid over [lo, hi].
    pub fn sample(f: &LipFn, lo: Vec<f64>, hi: Vec<f64>, dims: Vec<usize>) -> Result<GridFile> {
        let mut g = GridFile {
            dims,
            lo,
            hi,
            codomain: f.dout(),
            values: vec![],
        };
        g.check_shape()?;
        if g.dims.len() != f.din() {
            return Err(Error::Input(
                "grid dimension differs from the map's domain".into(),
            ));
        }
        let rows: Vec<Vec<f64>> = (0..g.nodes())
            .into_par_iter()
            .map(|i| f.eval_f(&g.node(i)))
            .collect();
        g.values = rows.concat();
        Ok(g)
    }

    fn check_shape(&self) -> Result<()> {
        let d = self.dims.len();
        if d == 0
            || d > u16::MAX as usize
            || self.lo.len() != d
            || self.hi.len() != d
            || self.codomain == 0
        {
            return Err(grid_err("shape"));
        }
        if self.dims.iter().any(|n| *n < 2 || *n > u32::MAX as usize) {
            return Err(grid_err("every axis needs at least 2 nodes"));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return Err(grid_err("bounding box"));
        }
        let total = self
            .dims
            .iter()
            .try_fold(self.codomain, |acc, n| acc.checked_mul(*n));
        match total {
            Some(t) if t <= GRID_MAX_VALUES => Ok(()),
            _ => Err(grid_err("payload too large")),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_shape()?;
        if self.values.len() != self.nodes() * self.codomain {
            return Err(grid_err("payload length"));
        }
        let d = self.dims.len();
        let mut out = Vec::with_capacity(12 + d * 20 + self.values.len() * 8);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u16).to_le_bytes());
        for n in &self.dims {
            out.extend_from_slice(&(*n as u32).to_le_bytes());
        }
        for v in self.lo.iter().chain(&self.hi) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.codomain as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<GridFile> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != GRID_MAGIC {
            return Err(grid_err("bad magic"));
        }
        let version = r.u16()?;
        if version != GRID_VERSION {
            return Err(grid_err(format!("unsupported version {version}")));
        }
        let d = r.u16()? as usize;
        let dims = (0..d)
            .map(|_| r.u32().map(|n| n as usize))
            .collect::<Result<Vec<_>>>()?;
        let lo = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let hi = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let codomain = r.u32()? as usize;
        let mut g = GridFile {
            dims,
            lo,
            hi,
            codomain,
            values: vec![],
        };
        g.check_shape()?;
        let n = g.nodes() * g.codomain;
        if buf.len() - r.pos != n * 8 {
            return Err(grid_err(format!(
                "payload holds {} bytes, expected {}",
                buf.len() - r.pos,
                n * 8
            )));
        }
        g.values = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(g)
    }

    /// Multilinear interpolant of the samples.
    pub fn to_lipfn(&self) -> Result<LipFn> {
        LipFn::grid(
            self.lo.clone(),
            self.hi.clone(),
            self.dims.clone(),
            self.codomain,
            self.values.clone(),
        )
    }
}

/// Parses one point per record. Blank lines and `#` comments are skipped; a
/// first record that is not numeric is taken as a header.
pub fn parse_points_csv(s: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(s.as_bytes());
    let mut out: Vec<Vec<f64>> = vec![];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("CSV: {e}")))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        let row = match row {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("CSV record {}: {e}", i + 1))),
        };
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!(
                "CSV record {}: non-finite coordinate",
                i + 1
            )));
        }
        if let Some(first) = out.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "CSV record {}: {} columns, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Comma-separated points, shortest round-trip decimal form.
pub fn points_csv(points: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// matplotlib's viridis resampled to 256 entries, 0xRRGGBB.
pub const VIRIDIS: [u32; 256] = [
    0x440154, 0x440256, 0x450457, 0x450559, 0x46075a, 0x46085c, 0x460a5d, 0x460b5e, 0x470d60,
    0x470e61, 0x471063, 0x471164, 0x471365, 0x481467, 0x481668, 0x481769, 0x48186a, 0x481a6c,
    0x481b6d, 0x481c6e, 0x481d6f, 0x481f70, 0x482071, 0x482173, 0x482374, 0x482475, 0x482576,
    0x482677, 0x482878, 0x482979, 0x472a7a, 0x472c7a, 0x472d7b, 0x472e7c, 0x472f7d, 0x46307e,
    0x46327e, 0x46337f, 0x463480, 0x453581, 0x453781, 0x453882, 0x443983, 0x443a83, 0x443b84,
    0x433d84, 0x433e85, 0x423f85, 0x424086, 0x424186, 0x414287, 0x414487, 0x404588, 0x404688,
    0x3f4788, 0x3f4889, 0x3e4989, 0x3e4a89, 0x3e4c8a, 0x3d4d8a, 0x3d4e8a, 0x3c4f8a, 0x3c508b,
    0x3b518b, 0x3b528b, 0x3a538b, 0x3a548c, 0x39558c, 0x39568c, 0x38588c, 0x38598c, 0x375a8c,
    0x375b8d, 0x365c8d, 0x365d8d, 0x355e8d, 0x355f8d, 0x34608d, 0x34618d, 0x33628d, 0x33638d,
    0x32648e, 0x32658e, 0x31668e, 0x31678e, 0x31688e, 0x30698e, 0x306a8e, 0x2f6b8e, 0x2f6c8e,
    0x2e6d8e, 0x2e6e8e, 0x2e6f8e, 0x2d708e, 0x2d718e, 0x2c718e, 0x2c728e, 0x2c738e, 0x2b748e,
    0x2b758e, 0x2a768e, 0x2a778e, 0x2a788e, 0x29798e, 0x297a8e, 0x297b8e, 0x287c8e, 0x287d8e,
    0x277e8e, 0x277f8e, 0x27808e, 0x26818e, 0x26828e, 0x26828e, 0x25838e, 0x25848e, 0x25858e,
    0x24868e, 0x24878e, 0x23888e, 0x23898e, 0x238a8d, 0x228b8d, 0x228c8d, 0x228d8d, 0x218e8d,
    0x218f8d, 0x21908d, 0x21918c, 0x20928c, 0x20928c, 0x20938c, 0x1f948c, 0x1f958b, 0x1f968b,
    0x1f978b, 0x1f988b, 0x1f998a, 0x1f9a8a, 0x1e9b8a, 0x1e9c89, 0x1e9d89, 0x1f9e89, 0x1f9f88,
    0x1fa088, 0x1fa188, 0x1fa187, 0x1fa287, 0x20a386, 0x20a486, 0x21a585, 0x21a685, 0x22a785,
    0x22a884, 0x23a983, 0x24aa83, 0x25ab82, 0x25ac82, 0x26ad81, 0x27ad81, 0x28ae80, 0x29af7f,
    0x2ab07f, 0x2cb17e, 0x2db27d, 0x2eb37c, 0x2fb47c, 0x31b57b, 0x32b67a, 0x34b679, 0x35b779,
    0x37b878, 0x38b977, 0x3aba76, 0x3bbb75, 0x3dbc74, 0x3fbc73, 0x40bd72, 0x42be71, 0x44bf70,
    0x46c06f, 0x48c16e, 0x4ac16d, 0x4cc26c, 0x4ec36b, 0x50c46a, 0x52c569, 0x54c568, 0x56c667,
    0x58c765, 0x5ac864, 0x5cc863, 0x5ec962, 0x60ca60, 0x63cb5f, 0x65cb5e, 0x67cc5c, 0x69cd5b,
    0x6ccd5a, 0x6ece58, 0x70cf57, 0x73d056, 0x75d054, 0x77d153, 0x7ad151, 0x7cd250, 0x7fd34e,
    0x81d34d, 0x84d44b, 0x86d549, 0x89d548, 0x8bd646, 0x8ed645, 0x90d743, 0x93d741, 0x95d840,
    0x98d83e, 0x9bd93c, 0x9dd93b, 0xa0da39, 0xa2da37, 0xa5db36, 0xa8db34, 0xaadc32, 0xaddc30,
    0xb0dd2f, 0xb2dd2d, 0xb5de2b, 0xb8de29, 0xbade28, 0xbddf26, 0xc0df25, 0xc2df23, 0xc5e021,
    0xc8e020, 0xcae11f, 0xcde11d, 0xd0e11c, 0xd2e21b, 0xd5e21a, 0xd8e219, 0xdae319, 0xdde318,
    0xdfe318, 0xe2e418, 0xe5e419, 0xe7e419, 0xeae51a, 0xece51b, 0xefe51c, 0xf1e51d, 0xf4e61e,
    0xf6e620, 0xf8e621, 0xfbe723, 0xfde725,
];

/// Colour of t ∈ [0, 1] (clamped).
pub fn viridis(t: f64) -> u32 {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    VIRIDIS[((t * 255.0).round() as usize).min(255)]
}

/// Row-major values on an nx × ny grid, rows running from bottom (y = lo)
/// to top, rendered as rectangles with a min/max legend. NaN cells are grey.
pub fn heatmap_svg(values: &[f64], nx: usize, ny: usize, title: &str) -> Result<String> {
    if nx == 0 || ny == 0 || values.len() != nx * ny {
        return Err(Error::Input("heatmap shape".into()));
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = (480 / nx.max(ny)).max(1);
    let (w, h) = (cell * nx, cell * ny);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" shape-rendering="crispEdges">"#,
        w + 20,
        h + 60
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="18" font-family="monospace" font-size="13">{}</text>"#,
        xml_escape(title)
    );
    for j in 0..ny {
        for i in 0..nx {
            let v = values[j * nx + i];
            let fill = if v.is_finite() {
                format!("#{:06x}", viridis((v - lo) / span))
            } else {
                "#888888".into()
            };
            let y = 28 + (ny - 1 - j) * cell;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{y}" width="{cell}" height="{cell}" fill="{fill}"/>"#,
                10 + i * cell
            );
        }
    }
    let (lo_s, hi_s) = if lo.is_finite() {
        (format!("{lo:.4e}"), format!("{hi:.4e}"))
    } else {
        ("nan".into(), "nan".into())
    };
    let _ = writeln!(
        s,
        r#"<text x="10" y="{}" font-family="monospace" font-size="11">min {lo_s}  max {hi_s}</text>"#,
        h + 48
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Evaluates `f` on an nx × ny node grid of [lo, hi] (rows bottom to top).
pub fn field_2d(
    lo: [f64; 2],
    hi: [f64; 2],
    nx: usize,
    ny: usize,
    f: impl Fn(&[f64]) -> f64 + Sync,
) -> Vec<f64> {
    (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            let x = lo[0] + (hi[0] - lo[0]) * (i as f64 + 0.5) / nx as f64;
            let y = lo[1] + (hi[1] - lo[1]) * (j as f64 + 0.5) / ny as f64;
            f(&[x, y])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::LinOp;
    use crate::space::NormedSpace;

    fn sample_grid() -> GridFile {
        let sp = NormedSpace::euclidean(2);
        let t = LinOp::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.25]], &sp, &sp).unwrap();
        GridFile::sample(
            &LipFn::linear(&t),
            vec![-1.0, 0.0],
            vec![1.0, 2.0],
            vec![5, 3],
        )
        .unwrap()
    }

    #[test]
    fn grid_round_trip_is_bit_exact() {
        let g = sample_grid();
        assert_eq!(g.values.len(), 5 * 3 * 2);
        let bytes = g.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LFGF");
        assert_eq!(GridFile::from_bytes(&bytes).unwrap(), g);
    }

    #[test]
    fn grid_nodes_are_row_major() {
        let g = sample_grid();
        assert_eq!(g.node(0), vec![-1.0, 0.0]);
        assert_eq!(g.node(1), vec![-1.0, 1.0]);
        assert_eq!(g.node(3), vec![-0.5, 0.0]);
        // f(x) = (x − 2y, x/2 + y/4) at node 3.
        assert_eq!(&g.values[6..8], &[-0.5, -0.25]);
    }

    #[test]
    fn grid_interpolant_reproduces_linear_maps() {
        let g = sample_grid();
        let f = g.to_lipfn().unwrap();
        let v = f.eval_f(&[0.3, 1.7]);
        assert!((v[0] - (0.3 - 3.4)).abs() < 1e-12 && (v[1] - (0.15 + 0.425)).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_corrupt_headers() {
        let bytes = sample_grid().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(GridFile::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(GridFile::from_bytes(&bad).is_err());
        assert!(GridFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(GridFile::from_bytes(&long).is_err());
        // Huge axis sizes fail on the size check, not on allocation.
        let mut huge = bytes.clone();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(GridFile::from_bytes(&huge).is_err());
        assert!(GridFile::from_bytes(&[]).is_err());
    }

    #[test]
    fn csv_points_with_header_and_comments() {
        let s = "x,y\n# a comment\n0.5, 0.25\n\n-1e-3,2\n";
        assert_eq!(
            parse_points_csv(s).unwrap(),
            vec![vec![0.5, 0.25], vec![-1e-3, 2.0]]
        );
        assert!(parse_points_csv("1,2\n3\n").is_err());
        assert!(parse_points_csv("1,2\nfoo,3\n").is_err());
        assert!(parse_points_csv("1,NaN\n").is_err());
        let pts = vec![vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-300]];
        assert_eq!(parse_points_csv(&points_csv(&pts)).unwrap(), pts);
    }

    #[test]
    fn viridis_endpoints_and_heatmap() {
        assert_eq!(viridis(0.0), 0x440154);
        assert_eq!(viridis(1.0), 0xfde725);
        assert_eq!(viridis(f64::NAN), 0x440154);
        let vals = field_2d([0.0, 0.0], [1.0, 1.0], 4, 3, |x| x[0] + x[1]);
        let svg = heatmap_svg(&vals, 4, 3, "a < b").unwrap();
        assert_eq!(svg.matches("<rect").count(), 12);
        assert!(svg.contains("a &lt; b") && svg.contains("#fde725") && svg.contains("#440154"));
        assert!(heatmap_svg(&vals, 5, 3, "").is_err());
    }
}
