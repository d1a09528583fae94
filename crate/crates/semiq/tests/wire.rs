use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use semiq::config::{ExperimentConfig, Transport};
use semiq::testbed::Testbed;
use semiq::transport::{frame, session_id, Demux};
use semiq_core::bits::BitString;
use semiq_core::cotp::{OracleAnswer, OracleQuery, TagBundle};
use semiq_core::cqtok::{tok_rec, tok_sen, tok_setup, tok_sign, EvalKey, Signature, TokenPublicKey, TokenSecretKey, TokenTag};
use semiq_core::crypt::SealedPayload;
use semiq_core::progvm::{corpus, Program, RamImage};
use semiq_core::qhw::Hardware;
use semiq_core::ramobf::{ChainAnnouncement, ChainParams, ChainSender, PendingChain};

fn through_frames(payloads: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let mut wire = Vec::new();
    for (i, p) in payloads.iter().enumerate() {
        wire.extend(frame(&session_id(i as u64 % 3), p).unwrap());
    }
    let mut d = Demux::new();
    for piece in wire.chunks(61) {
        d.feed(piece).unwrap();
    }
    (0..payloads.len())
        .map(|i| d.pop(&session_id(i as u64 % 3)).unwrap())
        .collect()
}

#[test]
fn every_message_type_survives_framing() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let cfg = ExperimentConfig::default();
    let bed = Testbed::new(&cfg).unwrap();
    let hw = Hardware::noiseless();

    let sk = TokenSecretKey::generate(&mut rng, 32);
    let pk = tok_setup(&sk);
    let (tag, ek) = loop {
        let (h, tag) = tok_rec(&pk, &mut rng, &hw).unwrap();
        if let Ok(ek) = tok_sen(&sk, &pk, &tag) {
            break (tag, ek);
        }
        hw.discard(&h).unwrap();
    };
    let (h, _) = tok_rec(&pk, &mut rng, &hw).unwrap();
    let sig = tok_sign(&hw, &h, true, &mut rng).unwrap();

    let params = ChainParams { lambda: 64, ..ChainParams::default() };
    let sender = ChainSender::new(corpus::accumulator(2), RamImage::zeroed(1), params, bed.mpk(), &mut rng).unwrap();
    let announcement = sender.announcement().clone();
    let (pending, tags) = PendingChain::start(&announcement, &hw, &mut rng).unwrap();
    let ct = sender.reply(&tags, &mut rng).unwrap();
    let state = pending.finish(ct.clone());
    let (_, next_tags) = state.prepare_next(&hw, &mut rng).unwrap();
    let query = state.build_query(&BitString::parse("01").unwrap(), &next_tags, &hw, &mut rng).unwrap();
    let answer = bed.session().query(&query).unwrap();
    assert!(matches!(answer, OracleAnswer::Chain { .. }));
    let program = corpus::point_function(4, 9);

    let payloads = vec![
        pk.encode(),
        tag.encode(),
        ek.encode(),
        sig.encode(),
        announcement.encode(),
        tags.encode(),
        ct.as_bytes().to_vec(),
        query.encode(),
        answer.encode(),
        OracleAnswer::Output(BitString::parse("101").unwrap()).encode(),
        OracleAnswer::Bottom.encode(),
        program.encode(),
    ];
    let back = through_frames(&payloads);
    assert_eq!(back, payloads);
    assert_eq!(TokenPublicKey::decode(&back[0]).unwrap(), pk);
    assert_eq!(TokenTag::decode(&back[1]).unwrap(), tag);
    assert_eq!(EvalKey::decode(&back[2]).unwrap(), ek);
    assert_eq!(Signature::decode(&back[3]).unwrap(), sig);
    assert_eq!(ChainAnnouncement::decode(&back[4]).unwrap(), announcement);
    assert_eq!(TagBundle::decode(&back[5]).unwrap(), tags);
    assert_eq!(SealedPayload::from_bytes(back[6].clone()), ct);
    assert_eq!(OracleQuery::decode(&back[7]).unwrap(), query);
    assert_eq!(OracleAnswer::decode(&back[8]).unwrap(), answer);
    assert_eq!(OracleAnswer::decode(&back[10]).unwrap(), OracleAnswer::Bottom);
    assert_eq!(Program::decode(&back[11]).unwrap(), program);
}

#[test]
fn socket_oracle_answers_like_the_local_one() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let local = Testbed::new(&ExperimentConfig::default()).unwrap();
    let remote = Testbed::new(&ExperimentConfig {
        transport: Transport::Socket,
        ..ExperimentConfig::default()
    })
    .unwrap();
    assert_eq!(local.mpk(), remote.mpk());
    let hw = Hardware::noiseless();
    let params = ChainParams { lambda: 64, ..ChainParams::default() };
    let sender = ChainSender::new(corpus::accumulator(2), RamImage::zeroed(1), params, local.mpk(), &mut rng).unwrap();
    let (pending, tags) = PendingChain::start(sender.announcement(), &hw, &mut rng).unwrap();
    let state = pending.finish(sender.reply(&tags, &mut rng).unwrap());
    let (_, next_tags) = state.prepare_next(&hw, &mut rng).unwrap();
    let query = state.build_query(&BitString::parse("11").unwrap(), &next_tags, &hw, &mut rng).unwrap();

    let want = local.session().query(&query).unwrap();
    // many sessions share one connection from several threads at once
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| {
                for _ in 0..5 {
                    let session = remote.session();
                    assert_eq!(session.query(&query).unwrap(), want);
                }
            });
        }
    });
    let mut forged = query.clone();
    forged.x = BitString::parse("10").unwrap();
    assert_eq!(remote.session().query(&forged).unwrap(), OracleAnswer::Bottom);
}
