//! Binary scenario record codec (`.nmx` files).
//!
//! Layout: magic `NMX1`, version u16, then five little-endian
//! length-prefixed sections (header, lanes, agents, statics, ego_log).
//! Encoding then decoding is bit-exact in both directions.

use super::{AgentKind, AgentPose, AgentTrack, MapLane, Scenario};
use crate::geom::{EgoState, OrientedBox};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"NMX1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated record: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("section {section} length mismatch: declared {declared}, consumed {consumed}")]
    SectionLength { section: &'static str, declared: usize, consumed: usize },
    #[error("field count exceeds the u32 record limit")]
    FieldOverflow,
    #[error("{0} bytes trailing after the last section")]
    TrailingBytes(usize),
    #[error("invalid agent kind tag {0}")]
    BadAgentKind(u8),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn count(&mut self, n: usize) -> Result<(), CodecError> {
        self.u32(u32::try_from(n).map_err(|_| CodecError::FieldOverflow)?);
        Ok(())
    }
    fn points(&mut self, pts: &[[f64; 2]]) -> Result<(), CodecError> {
        self.count(pts.len())?;
        for p in pts {
            self.f64(p[0]);
            self.f64(p[1]);
        }
        Ok(())
    }
}

pub fn encode_scenario(s: &Scenario) -> Result<Vec<u8>, CodecError> {
    let mut out = Writer::new();
    out.buf.extend_from_slice(&MAGIC);
    out.u16(FORMAT_VERSION);

    // header
    let mut header = Writer::new();
    header.count(s.ego_log.len())?;
    header.f64(s.dt);
    header.count(s.current_frame)?;
    header.f64(s.crop_radius);
    header.count(s.route.len())?;
    for id in &s.route {
        header.u64(*id);
    }
    push_section(&mut out, header);

    // lanes
    let mut lanes = Writer::new();
    lanes.count(s.lanes.len())?;
    for lane in &s.lanes {
        lanes.u64(lane.id);
        lanes.f64(lane.speed_limit);
        lanes.points(&lane.centerline)?;
        lanes.points(&lane.polygon)?;
        lanes.points(&lane.direction_hint)?;
    }
    push_section(&mut out, lanes);

    // agents
    let mut agents = Writer::new();
    agents.count(s.agents.len())?;
    for a in &s.agents {
        agents.u64(a.id);
        agents.u8(match a.kind {
            AgentKind::Vehicle => 0,
            AgentKind::Pedestrian => 1,
            AgentKind::Cyclist => 2,
        });
        agents.f64(a.length);
        agents.f64(a.width);
        agents.count(a.poses.len())?;
        for p in &a.poses {
            agents.f64(p.x);
            agents.f64(p.y);
            agents.f64(p.heading);
            agents.f64(p.speed);
            agents.u8(p.valid as u8);
        }
    }
    push_section(&mut out, agents);

    // statics
    let mut statics = Writer::new();
    statics.count(s.statics.len())?;
    for b in &s.statics {
        statics.f64(b.cx);
        statics.f64(b.cy);
        statics.f64(b.heading);
        statics.f64(b.length);
        statics.f64(b.width);
    }
    push_section(&mut out, statics);

    // ego log
    let mut ego = Writer::new();
    ego.count(s.ego_log.len())?;
    for e in &s.ego_log {
        ego.f64(e.x);
        ego.f64(e.y);
        ego.f64(e.heading);
        ego.f64(e.speed);
        ego.f64(e.accel);
        ego.f64(e.steer);
    }
    push_section(&mut out, ego);

    Ok(out.buf)
}

fn push_section(out: &mut Writer, section: Writer) {
    out.buf
        .extend_from_slice(&(section.buf.len() as u32).to_le_bytes());
    out.buf.extend_from_slice(&section.buf);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Truncated { needed: n, available: self.buf.len() - self.pos });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn count(&mut self) -> Result<usize, CodecError> {
        Ok(self.u32()? as usize)
    }
    fn points(&mut self) -> Result<Vec<[f64; 2]>, CodecError> {
        let n = self.count()?;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            out.push([self.f64()?, self.f64()?]);
        }
        Ok(out)
    }
    fn section(&mut self, name: &'static str) -> Result<Reader<'a>, CodecError> {
        let len = self.u32()? as usize;
        let body = self.take(len)?;
        let _ = name;
        Ok(Reader { buf: body, pos: 0 })
    }
    fn finish(&self, name: &'static str) -> Result<(), CodecError> {
        if self.pos != self.buf.len() {
            return Err(CodecError::SectionLength {
                section: name,
                declared: self.buf.len(),
                consumed: self.pos,
            });
        }
        Ok(())
    }
}

pub fn decode_scenario(bytes: &[u8]) -> Result<Scenario, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| CodecError::BadMagic)? != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }

    let mut header = r.section("header")?;
    let frame_count = header.count()?;
    let dt = header.f64()?;
    let current_frame = header.count()?;
    let crop_radius = header.f64()?;
    let route_len = header.count()?;
    let mut route = Vec::with_capacity(route_len.min(1 << 16));
    for _ in 0..route_len {
        route.push(header.u64()?);
    }
    header.finish("header")?;

    let mut lr = r.section("lanes")?;
    let lane_count = lr.count()?;
    let mut lanes = Vec::with_capacity(lane_count.min(1 << 16));
    for _ in 0..lane_count {
        let id = lr.u64()?;
        let speed_limit = lr.f64()?;
        let centerline = lr.points()?;
        let polygon = lr.points()?;
        let direction_hint = lr.points()?;
        lanes.push(MapLane { id, centerline, polygon, direction_hint, speed_limit });
    }
    lr.finish("lanes")?;

    let mut ar = r.section("agents")?;
    let agent_count = ar.count()?;
    let mut agents = Vec::with_capacity(agent_count.min(1 << 16));
    for _ in 0..agent_count {
        let id = ar.u64()?;
        let kind = match ar.u8()? {
            0 => AgentKind::Vehicle,
            1 => AgentKind::Pedestrian,
            2 => AgentKind::Cyclist,
            k => return Err(CodecError::BadAgentKind(k)),
        };
        let length = ar.f64()?;
        let width = ar.f64()?;
        let pose_count = ar.count()?;
        let mut poses = Vec::with_capacity(pose_count.min(1 << 16));
        for _ in 0..pose_count {
            poses.push(AgentPose {
                x: ar.f64()?,
                y: ar.f64()?,
                heading: ar.f64()?,
                speed: ar.f64()?,
                valid: ar.u8()? != 0,
            });
        }
        agents.push(AgentTrack { id, kind, length, width, poses });
    }
    ar.finish("agents")?;

    let mut sr = r.section("statics")?;
    let static_count = sr.count()?;
    let mut statics = Vec::with_capacity(static_count.min(1 << 16));
    for _ in 0..static_count {
        statics.push(OrientedBox::new(sr.f64()?, sr.f64()?, sr.f64()?, sr.f64()?, sr.f64()?));
    }
    sr.finish("statics")?;

    let mut er = r.section("ego_log")?;
    let ego_count = er.count()?;
    let mut ego_log = Vec::with_capacity(ego_count.min(1 << 16));
    for _ in 0..ego_count {
        ego_log.push(EgoState {
            x: er.f64()?,
            y: er.f64()?,
            heading: er.f64()?,
            speed: er.f64()?,
            accel: er.f64()?,
            steer: er.f64()?,
        });
    }
    er.finish("ego_log")?;

    if r.pos != r.buf.len() {
        return Err(CodecError::TrailingBytes(r.buf.len() - r.pos));
    }
    let _ = frame_count; // implied by ego_log length; validated separately

    Ok(Scenario { dt, current_frame, crop_radius, ego_log, agents, statics, lanes, route })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_synthetic, ScenarioKind, FRAME_COUNT};
    use proptest::prelude::*;

    fn minimal_scenario() -> Scenario {
        let centerline = vec![[-50.0, 0.0], [250.0, 0.0]];
        let polygon = vec![[-50.0, -2.0], [250.0, -2.0], [250.0, 2.0], [-50.0, 2.0]];
        let lane = MapLane {
            id: 1,
            centerline,
            polygon,
            direction_hint: vec![[1.0, 0.0], [1.0, 0.0]],
            speed_limit: 15.0,
        };
        let ego_log = (0..FRAME_COUNT)
            .map(|i| EgoState {
                x: i as f64 * 0.5,
                y: 0.0,
                heading: 0.0,
                speed: 5.0,
                accel: 0.0,
                steer: 0.0,
            })
            .collect();
        Scenario {
            dt: 0.1,
            current_frame: 20,
            crop_radius: 200.0,
            ego_log,
            agents: vec![],
            statics: vec![],
            lanes: vec![lane],
            route: vec![1],
        }
    }

    #[test]
    fn minimal_round_trip() {
        let s = minimal_scenario();
        let bytes = encode_scenario(&s).unwrap();
        let d = decode_scenario(&bytes).unwrap();
        assert_eq!(s, d);
        assert_eq!(encode_scenario(&d).unwrap(), bytes);
    }

    #[test]
    fn generated_round_trip_bit_exact() {
        for seed in 0..10u64 {
            let s = generate_synthetic(seed, ScenarioKind::BlockedLane);
            let bytes = encode_scenario(&s).unwrap();
            let d = decode_scenario(&bytes).unwrap();
            assert_eq!(s, d);
            assert_eq!(encode_scenario(&d).unwrap(), bytes);
        }
    }

    #[test]
    fn empty_input_is_bad_magic() {
        assert!(matches!(decode_scenario(&[]), Err(CodecError::BadMagic)));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode_scenario(&minimal_scenario()).unwrap();
        bytes[4..6].copy_from_slice(&999u16.to_le_bytes());
        assert!(matches!(decode_scenario(&bytes), Err(CodecError::UnsupportedVersion(999))));
    }

    #[test]
    fn truncation_is_an_error_not_a_crash() {
        let bytes = encode_scenario(&minimal_scenario()).unwrap();
        for cut in [5, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            let res = decode_scenario(&bytes[..cut]);
            assert!(res.is_err(), "cut at {cut} should fail");
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_scenario(&minimal_scenario()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_scenario(&bytes), Err(CodecError::TrailingBytes(1))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_identity_on_random_scenarios(seed in any::<u64>(), kind_ix in 0usize..5) {
            let kind = [
                ScenarioKind::Straight,
                ScenarioKind::Curve,
                ScenarioKind::Intersection,
                ScenarioKind::BlockedLane,
                ScenarioKind::ConeGap,
            ][kind_ix];
            let s = generate_synthetic(seed, kind);
            let bytes = encode_scenario(&s).unwrap();
            let d = decode_scenario(&bytes).unwrap();
            prop_assert_eq!(&s, &d);
            prop_assert_eq!(encode_scenario(&d).unwrap(), bytes);
        }
    }
}
