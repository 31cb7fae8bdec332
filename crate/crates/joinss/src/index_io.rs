//! Versioned binary serialization of the static index.
//!
//! Layout: magic "JSSI1", then little-endian fields with u64
//! length-prefixed arrays. The expensive count tables are stored verbatim;
//! group aggregates and prefix sums are cheap derivations and are rebuilt on
//! load, which keeps the format small and the loaded index bit-identical in
//! behavior.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::relation::{Relation, Value};
use crate::score::{AggKind, Aggregator, ScoreParams};
use crate::static_index::{build_prefix_sums, StaticIndex};

const MAGIC: &[u8; 5] = b"JSSI1";

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.0.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u128(&mut self, v: u128) -> Result<()> {
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.0.write_all(&v.to_bits().to_le_bytes())?;
        Ok(())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.0.write_all(s.as_bytes())?;
        Ok(())
    }
    fn value(&mut self, v: &Value) -> Result<()> {
        match v {
            Value::Int(n) => {
                self.u8(0)?;
                self.0.write_all(&n.to_le_bytes())?;
            }
            Value::Str(s) => {
                self.u8(1)?;
                self.str(s)?;
            }
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.0.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.bytes(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        if len > (1 << 30) {
            return Err(Error::BadIndexFile("string length too large".into()));
        }
        String::from_utf8(self.bytes(len)?)
            .map_err(|_| Error::BadIndexFile("invalid utf-8".into()))
    }
    fn value(&mut self) -> Result<Value> {
        match self.u8()? {
            0 => Ok(Value::Int(i64::from_le_bytes(
                self.bytes(8)?.try_into().unwrap(),
            ))),
            1 => Ok(Value::Str(self.str()?)),
            t => Err(Error::BadIndexFile(format!("unknown value tag {t}"))),
        }
    }
}

pub fn serialize_index<W: Write>(idx: &StaticIndex, sink: W) -> Result<()> {
    let mut w = Writer(sink);
    w.0.write_all(MAGIC)?;
    w.u8(match idx.agg.kind {
        AggKind::Product => 0,
        AggKind::Min => 1,
        AggKind::Max => 2,
        AggKind::Sum => 3,
    })?;
    w.u64(idx.agg.k as u64)?;
    w.u32(idx.params.cutoff)?;
    w.u32(idx.params.rho)?;
    w.u64(idx.params.n)?;

    let inst = &idx.instance;
    w.u64(inst.relation_count() as u64)?;
    for rel in &inst.relations {
        w.str(&rel.name)?;
        w.u64(rel.schema.len() as u64)?;
        for a in &rel.schema {
            w.str(a)?;
        }
    }
    for node in 0..inst.relation_count() {
        match inst.tree.parent[node] {
            Some(p) => w.u64(p as u64)?,
            None => w.u64(u64::MAX)?,
        }
    }
    for rel in &inst.relations {
        w.u64(rel.len() as u64)?;
        for t in &rel.tuples {
            for v in &t.values {
                w.value(v)?;
            }
            w.f64(t.weight)?;
            w.u64(t.ts)?;
        }
    }
    for node in 0..inst.relation_count() {
        for t in 0..inst.relations[node].len() {
            let slots = &idx.w[node][t];
            w.u64(slots.len() as u64)?;
            for arr in slots {
                w.u64(arr.len() as u64)?;
                for &v in arr {
                    w.u128(v)?;
                }
            }
        }
    }
    w.u64(idx.bucket_sizes.len() as u64)?;
    for &b in &idx.bucket_sizes {
        w.u128(b)?;
    }
    w.u128(idx.total_join)?;
    w.u128(idx.tail_size)?;
    Ok(())
}

pub fn deserialize_index<R: Read>(source: R) -> Result<StaticIndex> {
    let mut r = Reader(source);
    let magic = r.bytes(5)?;
    if magic != MAGIC {
        return Err(Error::BadIndexFile("bad magic".into()));
    }
    let kind = match r.u8()? {
        0 => AggKind::Product,
        1 => AggKind::Min,
        2 => AggKind::Max,
        3 => AggKind::Sum,
        t => return Err(Error::BadIndexFile(format!("unknown aggregator tag {t}"))),
    };
    let k = r.u64()? as usize;
    let agg = Aggregator::new(kind, k);
    let cutoff = r.u32()?;
    let rho = r.u32()?;
    let n = r.u64()?;
    let params = ScoreParams { cutoff, rho, n };

    let relation_count = r.u64()? as usize;
    if relation_count != k {
        return Err(Error::BadIndexFile("relation count mismatch".into()));
    }
    let mut names = Vec::with_capacity(relation_count);
    let mut schemas = Vec::with_capacity(relation_count);
    for _ in 0..relation_count {
        names.push(r.str()?);
        let attrs = r.u64()? as usize;
        let mut schema = Vec::with_capacity(attrs);
        for _ in 0..attrs {
            schema.push(r.str()?);
        }
        schemas.push(schema);
    }
    let mut parents = Vec::with_capacity(relation_count);
    for _ in 0..relation_count {
        let p = r.u64()?;
        parents.push(if p == u64::MAX { None } else { Some(p as usize) });
    }
    let mut relations = Vec::with_capacity(relation_count);
    for i in 0..relation_count {
        let mut rel = Relation::new(names[i].clone(), schemas[i].clone())?;
        let count = r.u64()? as usize;
        for _ in 0..count {
            let mut values = Vec::with_capacity(rel.schema.len());
            for _ in 0..rel.schema.len() {
                values.push(r.value()?);
            }
            let weight = r.f64()?;
            let ts = r.u64()?;
            rel.push(values, weight, ts)?;
        }
        relations.push(rel);
    }
    let mut instance = Instance::new(relations)?;
    // the stored tree must match the deterministic rebuild
    if instance.tree.parent != parents {
        return Err(Error::BadIndexFile("join tree mismatch".into()));
    }
    instance.assign_scores(cutoff)?;

    let mut w = Vec::with_capacity(relation_count);
    for rel in &instance.relations {
        let mut node_w = Vec::with_capacity(rel.len());
        for _ in 0..rel.len() {
            let slot_count = r.u64()? as usize;
            if slot_count > 64 {
                return Err(Error::BadIndexFile("slot count too large".into()));
            }
            let mut slots = Vec::with_capacity(slot_count);
            for _ in 0..slot_count {
                let len = r.u64()? as usize;
                if len != cutoff as usize + 1 {
                    return Err(Error::BadIndexFile("count array length mismatch".into()));
                }
                let mut arr = Vec::with_capacity(len);
                for _ in 0..len {
                    arr.push(r.u128()?);
                }
                slots.push(arr);
            }
            node_w.push(slots);
        }
        w.push(node_w);
    }
    let bucket_count = r.u64()? as usize;
    if bucket_count != cutoff as usize {
        return Err(Error::BadIndexFile("bucket count mismatch".into()));
    }
    let mut bucket_sizes = Vec::with_capacity(bucket_count);
    for _ in 0..bucket_count {
        bucket_sizes.push(r.u128()?);
    }
    let total_join = r.u128()?;
    let tail_size = r.u128()?;

    // derive group aggregates and prefix sums exactly as the builder does
    let slots = cutoff as usize + 1;
    let mut m = Vec::with_capacity(relation_count);
    for node in 0..relation_count {
        let rel = &instance.relations[node];
        let mut node_m = Vec::with_capacity(rel.groups.len());
        for (_, range) in &rel.groups {
            let mut acc = vec![0u128; slots];
            for t in range.clone() {
                for (s, v) in w[node][t][0].iter().enumerate() {
                    acc[s] = acc[s]
                        .checked_add(*v)
                        .ok_or_else(|| Error::Capacity("group aggregate overflows".into()))?;
                }
            }
            node_m.push(acc);
        }
        m.push(node_m);
    }
    let prefix = build_prefix_sums(&instance, &w, slots)?;

    Ok(StaticIndex::from_parts(
        instance,
        params,
        agg,
        w,
        m,
        prefix,
        bucket_sizes,
        tail_size,
        total_join,
    ))
}
