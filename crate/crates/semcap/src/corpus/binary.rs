//! Binary embedding matrix format.
//!
//! Layout (little-endian): magic `SEMC`, version u16 = 1, dim u32, count
//! u64, then count x dim f32 values row-major, then a UTF-8 manifest of
//! count newline-terminated id lines. Index files append a `NRMS` section
//! after the manifest (see the index module).

use std::io::{BufRead, Read, Write};

use super::{CorpusError, EmbeddingMatrix};

const MAGIC: &[u8; 4] = b"SEMC";
const VERSION: u16 = 1;

/// Writes the matrix-plus-manifest section. Ids must be newline-free and
/// row-aligned with the matrix.
pub(crate) fn write_matrix_section<W: Write>(
    matrix: &EmbeddingMatrix,
    ids: &[String],
    writer: &mut W,
) -> Result<(), CorpusError> {
    assert_eq!(
        ids.len(),
        matrix.count(),
        "manifest must have one id per matrix row"
    );
    for id in ids {
        if id.contains('\n') {
            return Err(CorpusError::IdWithNewline { id: id.clone() });
        }
    }
    writer.write_all(MAGIC)?;
    writer.write_all(&VERSION.to_le_bytes())?;
    writer.write_all(&(matrix.dim() as u32).to_le_bytes())?;
    writer.write_all(&(matrix.count() as u64).to_le_bytes())?;
    for &value in matrix.values() {
        writer.write_all(&value.to_le_bytes())?;
    }
    for id in ids {
        writer.write_all(id.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads the matrix-plus-manifest section, leaving the reader positioned
/// just past the manifest.
pub(crate) fn read_matrix_section<R: BufRead>(
    reader: &mut R,
) -> Result<(EmbeddingMatrix, Vec<String>), CorpusError> {
    let mut magic = [0u8; 4];
    read_exact(reader, &mut magic, "magic bytes")?;
    if &magic != MAGIC {
        return Err(CorpusError::BadMagic { expected: "SEMC" });
    }
    let mut buf2 = [0u8; 2];
    read_exact(reader, &mut buf2, "format version")?;
    let version = u16::from_le_bytes(buf2);
    if version != VERSION {
        return Err(CorpusError::BadVersion(version));
    }
    let mut buf4 = [0u8; 4];
    read_exact(reader, &mut buf4, "dimension header")?;
    let dim = u32::from_le_bytes(buf4) as usize;
    let mut buf8 = [0u8; 8];
    read_exact(reader, &mut buf8, "row count header")?;
    let count = u64::from_le_bytes(buf8) as usize;

    if dim == 0 {
        return Err(CorpusError::ZeroDim);
    }
    let total = count.checked_mul(dim).ok_or(CorpusError::Truncated {
        context: "matrix payload size overflows",
    })?;
    let mut payload = vec![0u8; total * 4];
    read_exact(reader, &mut payload, "matrix payload")?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut ids = Vec::with_capacity(count);
    for row in 0..count {
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(CorpusError::Truncated {
                context: "manifest line missing newline",
            });
        }
        line.pop();
        let id = String::from_utf8(line).map_err(|_| CorpusError::ManifestUtf8 { row })?;
        ids.push(id);
    }

    Ok((EmbeddingMatrix::new(dim, values)?, ids))
}

fn read_exact<R: Read>(
    reader: &mut R,
    buf: &mut [u8],
    context: &'static str,
) -> Result<(), CorpusError> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CorpusError::Truncated { context }
        } else {
            CorpusError::Io(e)
        }
    })
}

pub(crate) fn expect_eof<R: Read>(reader: &mut R) -> Result<(), CorpusError> {
    let mut probe = [0u8; 1];
    match reader.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(CorpusError::TrailingData),
    }
}

/// Serializes an embedding matrix with its id manifest.
pub fn write_binary_matrix<W: Write>(
    matrix: &EmbeddingMatrix,
    ids: &[String],
    writer: &mut W,
) -> Result<(), CorpusError> {
    write_matrix_section(matrix, ids, writer)
}

/// Reads a matrix file written by [`write_binary_matrix`], rejecting
/// trailing bytes.
pub fn read_binary_matrix<R: BufRead>(
    mut reader: R,
) -> Result<(EmbeddingMatrix, Vec<String>), CorpusError> {
    let result = read_matrix_section(&mut reader)?;
    expect_eof(&mut reader)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn matrix(dim: usize, values: &[f32]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(dim, values.to_vec()).unwrap()
    }

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn header_and_payload_sizes() {
        let mut buf = Vec::new();
        write_binary_matrix(&matrix(2, &[1.0, 2.0]), &ids(&["x"]), &mut buf).unwrap();
        // magic(4) + version(2) + dim(4) + count(8) = 18 header bytes,
        // 8 payload bytes, then the manifest "x\n".
        assert_eq!(buf.len(), 18 + 8 + 2);
        assert_eq!(&buf[..4], b"SEMC");
        assert_eq!(&buf[buf.len() - 2..], b"x\n");
    }

    #[test]
    fn round_trip_preserves_bits_and_ids() {
        let values: Vec<f32> = (0..160).map(|i| (i as f32) * 0.37 - 29.5).collect();
        let m = matrix(16, &values);
        let names = ids(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let mut buf = Vec::new();
        write_binary_matrix(&m, &names, &mut buf).unwrap();
        let (back, back_ids) = read_binary_matrix(Cursor::new(buf)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_ids, names);
    }

    #[test]
    fn empty_matrix_round_trips() {
        let m = matrix(3, &[]);
        let mut buf = Vec::new();
        write_binary_matrix(&m, &[], &mut buf).unwrap();
        let (back, back_ids) = read_binary_matrix(Cursor::new(buf)).unwrap();
        assert_eq!(back.count(), 0);
        assert_eq!(back.dim(), 3);
        assert!(back_ids.is_empty());
    }

    #[test]
    fn newline_in_id_is_rejected() {
        let err = write_binary_matrix(&matrix(1, &[1.0]), &ids(&["bad\nid"]), &mut Vec::new())
            .unwrap_err();
        assert!(matches!(err, CorpusError::IdWithNewline { .. }));
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut buf = Vec::new();
        write_binary_matrix(&matrix(1, &[1.0]), &ids(&["x"]), &mut buf).unwrap();
        let mut corrupted = buf.clone();
        corrupted[0] = b'X';
        assert!(matches!(
            read_binary_matrix(Cursor::new(corrupted)),
            Err(CorpusError::BadMagic { .. })
        ));
        let mut wrong_version = buf.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            read_binary_matrix(Cursor::new(wrong_version)),
            Err(CorpusError::BadVersion(9))
        ));
    }

    #[test]
    fn truncated_payload_and_trailing_data_are_rejected() {
        let mut buf = Vec::new();
        write_binary_matrix(&matrix(2, &[1.0, 2.0]), &ids(&["x"]), &mut buf).unwrap();
        assert!(matches!(
            read_binary_matrix(Cursor::new(&buf[..20])),
            Err(CorpusError::Truncated { .. })
        ));
        let mut extended = buf.clone();
        extended.push(0);
        assert!(matches!(
            read_binary_matrix(Cursor::new(extended)),
            Err(CorpusError::TrailingData)
        ));
    }

    #[test]
    fn non_finite_payload_is_rejected_on_read() {
        let mut buf = Vec::new();
        write_binary_matrix(&matrix(1, &[1.0]), &ids(&["x"]), &mut buf).unwrap();
        buf[18..22].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_binary_matrix(Cursor::new(buf)),
            Err(CorpusError::NonFiniteRow { row: 0 })
        ));
    }
}
