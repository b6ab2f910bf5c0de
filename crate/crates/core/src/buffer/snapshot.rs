//! JSON-lines snapshots of the RL buffer, one trajectory per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BufferError, RlBuffer, Role, Trajectory};

pub fn write_snapshot<W: Write>(buffer: &RlBuffer, mut out: W) -> Result<(), BufferError> {
    for entry in buffer.entries() {
        let line = serde_json::to_string(entry).expect("trajectory serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(input: R, capacity: Option<usize>) -> Result<RlBuffer, BufferError> {
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line)
            .map_err(|e| BufferError::CorruptSnapshot { line: i + 1, reason: e.to_string() })?;
        if traj.role != Some(Role::Query) {
            return Err(BufferError::CorruptSnapshot {
                line: i + 1,
                reason: format!("entry {} is not query-role", traj.task_id),
            });
        }
        entries.push(traj);
    }
    Ok(RlBuffer::from_entries(entries, capacity))
}

pub fn save_snapshot(buffer: &RlBuffer, path: &Path) -> Result<(), BufferError> {
    write_snapshot(buffer, BufWriter::new(File::create(path)?))
}

pub fn load_snapshot(path: &Path, capacity: Option<usize>) -> Result<RlBuffer, BufferError> {
    read_snapshot(File::open(path)?, capacity)
}

#[cfg(test)]
mod tests {
    use super::super::tests_support::query;
    use super::*;

    fn same_entries(a: &RlBuffer, b: &RlBuffer) -> bool {
        a.entries().eq(b.entries())
    }

    #[test]
    fn empty_and_three_entry_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buf.jsonl");
        let empty = RlBuffer::new(None);
        save_snapshot(&empty, &path).unwrap();
        assert!(load_snapshot(&path, None).unwrap().is_empty());

        let b = RlBuffer::from_entries(vec![query("a", 0), query("b", 1), query("c", 1)], None);
        save_snapshot(&b, &path).unwrap();
        assert!(same_entries(&load_snapshot(&path, None).unwrap(), &b));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let b = RlBuffer::from_entries(vec![query("a", 0), query("b", 1)], None);
        let mut bytes = Vec::new();
        write_snapshot(&b, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 20);
        assert!(matches!(read_snapshot(&bytes[..], None), Err(BufferError::CorruptSnapshot { line: 2, .. })));
    }

    #[test]
    fn support_role_line_is_corrupt() {
        let mut t = query("a", 0);
        t.role = Some(Role::Support);
        let line = serde_json::to_string(&t).unwrap();
        assert!(matches!(read_snapshot(line.as_bytes(), None), Err(BufferError::CorruptSnapshot { .. })));
    }

    #[test]
    fn lines_carry_generation_and_role() {
        let b = RlBuffer::from_entries(vec![query("a", 4)], None);
        let mut bytes = Vec::new();
        write_snapshot(&b, &mut bytes).unwrap();
        let v: serde_json::Value = serde_json::from_slice(bytes.trim_ascii_end()).unwrap();
        assert_eq!(v["generation"], 4);
        assert_eq!(v["role"], "query");
    }
}
