//! Binary checkpoints of a [`Trainer`].
//!
//! Layout: `MACECKPT`, format version (u32), body length (u64), body,
//! xxh3-64 of the body. The body holds the run spec as JSON, the update
//! index, the count tables, the target model and every agent's tables.

use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::binio;
use crate::counts::CountModel;
use crate::error::{Error, Result};
use crate::policy::{PolicyTable, TargetModel, ValueTable};
use crate::train::{AgentLearner, TrainSpec, Trainer};

pub const MAGIC: &[u8; 8] = b"MACECKPT";
pub const VERSION: u32 = 1;

pub fn write(trainer: &Trainer, w: &mut impl Write) -> Result<()> {
    let mut body = Vec::new();
    binio::put_bytes(&mut body, serde_json::to_string(&trainer.spec)?.as_bytes())?;
    binio::put_u64(&mut body, trainer.update)?;
    trainer.counts.write_to(&mut body)?;

    let t = &trainer.targets;
    binio::put_u64(&mut body, t.refreshes())?;
    CountModel::from_snapshot(trainer.codec, t.counts()).write_to(&mut body)?;
    let (ve, vi) = t.value_tables();
    for v in ve.iter().chain(vi) {
        v.write_to(&mut body)?;
    }

    binio::put_u64(&mut body, trainer.agents.len() as u64)?;
    for a in &trainer.agents {
        a.policy.write_to(&mut body)?;
        a.value.write_to(&mut body)?;
        a.v_ext.write_to(&mut body)?;
        a.v_int.write_to(&mut body)?;
    }

    w.write_all(MAGIC)?;
    binio::put_u32(w, VERSION)?;
    binio::put_u64(w, body.len() as u64)?;
    w.write_all(&body)?;
    binio::put_u64(w, xxhash_rust::xxh3::xxh3_64(&body))?;
    Ok(())
}

pub fn read(r: &mut impl Read) -> Result<Trainer> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = binio::get_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = binio::get_len(r, binio::MAX_LEN)?;
    let mut body = Vec::new();
    r.take(len as u64).read_to_end(&mut body)?;
    if body.len() != len {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    if binio::get_u64(r)? != xxhash_rust::xxh3::xxh3_64(&body) {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }

    let mut c = Cursor::new(body);
    let spec: TrainSpec = serde_json::from_slice(&binio::get_bytes(&mut c, 1 << 20)?)?;
    let mut trainer = Trainer::new(spec)?;
    let codec = trainer.codec;
    let n = trainer.spec.task.agents;
    trainer.update = binio::get_u64(&mut c)?;
    trainer.counts = CountModel::read_from(codec, &mut c)?;

    let refreshes = binio::get_u64(&mut c)?;
    let frozen = CountModel::read_from(codec, &mut c)?.snapshot();
    let mut tables = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        tables.push(Arc::new(ValueTable::read_from(&mut c)?));
    }
    let vi = tables.split_off(n);
    trainer.targets = TargetModel::from_parts(frozen, tables, vi, refreshes);

    let agents = binio::get_len(&mut c, 64)?;
    if agents != n {
        return Err(Error::Checkpoint(format!("checkpoint holds {agents} agents, task has {n}")));
    }
    trainer.agents = (0..n)
        .map(|_| {
            Ok(AgentLearner {
                policy: Arc::new(PolicyTable::read_from(&mut c)?),
                value: ValueTable::read_from(&mut c)?,
                v_ext: Arc::new(ValueTable::read_from(&mut c)?),
                v_int: Arc::new(ValueTable::read_from(&mut c)?),
            })
        })
        .collect::<Result<_>>()?;
    if c.position() != c.get_ref().len() as u64 {
        return Err(Error::Checkpoint("trailing bytes in checkpoint body".into()));
    }
    Ok(trainer)
}

/// Writes to `path` through a temporary file so a crash never leaves a torn checkpoint.
pub fn save(trainer: &Trainer, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write(trainer, &mut f)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Trainer> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    read(&mut std::io::BufReader::new(f))
}
