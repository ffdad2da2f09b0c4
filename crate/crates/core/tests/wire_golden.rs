use darkhorse::control::ControlMessage;
use darkhorse::crypto::{e2e_decrypt, CipherSuite, SealedCell, SymmetricKey, KEY_LEN};
use darkhorse::data::DataPacket;
use darkhorse::golden::{generate, sample_messages, to_json, GoldenVectors};

const SHIPPED: &str = include_str!("../golden/golden_vectors.json");

fn shipped() -> GoldenVectors {
    serde_json::from_str(SHIPPED).expect("shipped vectors parse")
}

fn bytes(h: &str) -> Vec<u8> {
    hex::decode(h).expect("hex")
}

fn key(h: &str) -> SymmetricKey {
    let b: [u8; KEY_LEN] = bytes(h).try_into().expect("32-byte key");
    SymmetricKey::new(b, 0)
}

#[test]
fn regeneration_matches_shipped_file() {
    assert_eq!(to_json(&generate()), SHIPPED);
}

#[test]
fn shipped_cells_peel_to_their_payloads() {
    let v = shipped();
    assert_eq!(v.cells.len(), 8);
    for c in &v.cells {
        let wire = bytes(&c.wire);
        assert_eq!(&wire[..4], &c.circuit_id.to_be_bytes(), "{}", c.name);
        assert_eq!(wire[4] as usize, c.keys.len(), "{}", c.name);
        let mut cell = SealedCell::decode(&wire).unwrap();
        assert_eq!(cell.encode(), wire, "{}", c.name);
        for (k, n) in c.keys.iter().zip(&c.nonces) {
            assert_eq!(cell.nonce().unwrap(), bytes(n).as_slice(), "{}", c.name);
            cell = cell.peel(c.suite, &key(k)).unwrap();
        }
        assert_eq!(cell.body(), bytes(&c.payload).as_slice(), "{}", c.name);
    }
}

#[test]
fn null_suite_cells_show_the_payload_in_clear() {
    // Identity cipher: the innermost payload sits right after every nonce.
    for c in shipped().cells.iter().filter(|c| c.suite == CipherSuite::Null) {
        let wire = bytes(&c.wire);
        let start = 5 + 12 * c.keys.len();
        let p = bytes(&c.payload);
        assert_eq!(&wire[start..start + p.len()], p.as_slice(), "{}", c.name);
    }
}

#[test]
fn shipped_e2e_envelopes_open() {
    for e in shipped().e2e {
        let (nonce, pt) = e2e_decrypt(e.suite, &key(&e.key), &bytes(&e.sealed)).unwrap();
        assert_eq!(pt, bytes(&e.payload));
        assert_eq!((nonce[0], nonce[1]), (e.domain, e.direction));
        assert_eq!(u64::from_be_bytes(nonce[4..].try_into().unwrap()), e.seq);
    }
}

#[test]
fn shipped_messages_decode_to_the_samples() {
    let v = shipped();
    let samples = sample_messages();
    assert_eq!(v.messages.len(), samples.len());
    for (m, (name, msg)) in v.messages.iter().zip(samples) {
        assert_eq!(m.name, name);
        let wire = bytes(&m.wire);
        assert_eq!(ControlMessage::decode(&wire).unwrap(), msg, "{name}");
        assert_eq!(
            u32::from_be_bytes(wire[..4].try_into().unwrap()) as usize,
            wire.len() - 4
        );
    }
}

#[test]
fn shipped_packets_decode() {
    for p in shipped().packets {
        let wire = bytes(&p.wire);
        assert_eq!(wire.len(), p.seq_bytes as usize + p.chunk.len() / 2);
        let d = DataPacket::decode(&wire, p.seq_bytes).unwrap();
        assert_eq!(d.seq, p.seq);
        assert_eq!(d.chunk, bytes(&p.chunk));
    }
}
