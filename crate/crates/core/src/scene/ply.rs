use std::io::{self, Write};

/// Writes an ASCII PLY with vertex properties `x y z ep_re ep_im rotor`.
///
/// Rows are `(xyz, [ep_re, ep_im], rotor)`.
pub fn write_ply<W, I>(mut out: W, rows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = ([f64; 3], [f64; 2], bool)>,
    I::IntoIter: ExactSizeIterator,
{
    let rows = rows.into_iter();
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", rows.len())?;
    for name in ["x", "y", "z", "ep_re", "ep_im"] {
        writeln!(out, "property double {name}")?;
    }
    writeln!(out, "property uchar rotor")?;
    writeln!(out, "end_header")?;
    for (p, ep, rotor) in rows {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            p[0], p[1], p[2], ep[0], ep[1], rotor as u8
        )?;
    }
    Ok(())
}
