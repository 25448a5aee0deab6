//! Regenerates the checked-in capture fixtures under `tests/fixtures`.
//!
//!     cargo run -p bytecnn --example make_fixtures
//!
//! Afterwards re-run `tests/fixtures/dissect.py` to refresh the expected
//! offsets recorded by the reference dissector.

use std::net::Ipv4Addr;
use std::path::PathBuf;

use bytecnn::ingest::{
    write_pcap, Endianness, PcapHeader, RawPacket, TsResolution, LINKTYPE_ETHERNET, PROTO_UDP,
};
use bytecnn::synth::{build_frame, generate_class_fixtures, FrameSpec, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");

    let data = build_frame(&FrameSpec {
        src_mac: [0x02, 0, 0, 0, 0, 0x01],
        dst_mac: [0x02, 0, 0, 0, 0, 0x02],
        src_ip: Ipv4Addr::new(10, 0, 0, 1),
        dst_ip: Ipv4Addr::new(10, 0, 0, 2),
        src_port: 5000,
        dst_port: 53,
        proto: PROTO_UDP,
        ip_id: 0x1234,
        tcp_seq: 0,
        payload: b"bytecnn-fixture-18".to_vec(),
    });
    assert_eq!(data.len(), 60);
    let pkt = RawPacket {
        ts_sec: 1_700_000_000,
        ts_frac: 250_000,
        resolution: TsResolution::Micro,
        orig_len: 60,
        link_type: LINKTYPE_ETHERNET,
        data,
    };
    let header = PcapHeader::new(LINKTYPE_ETHERNET, TsResolution::Micro, Endianness::Little);
    write_pcap(dir.join("one_udp.pcap"), header, [&pkt])?;

    let mut spec = SynthSpec::with_classes(2, 60, 2024);
    spec.tuple_pool = 6;
    spec.classes[0].name = "benign".into();
    spec.classes[1].name = "malicious".into();
    generate_class_fixtures(&spec, &dir)?;
    Ok(())
}
