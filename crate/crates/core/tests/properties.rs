use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use semiq_core::bits::BitString;
use semiq_core::cotp::{OracleAnswer, OracleProgram};
use semiq_core::crypt::{pk_decrypt, pk_encrypt, MasterKeypair, PrfKey};
use semiq_core::ftlift::FtParams;
use semiq_core::gf2::{rref, Subspace};
use semiq_core::progvm::{corpus, eval_program, Program, RamImage};
use semiq_core::qhw::Hardware;

fn bits() -> impl Strategy<Value = BitString> {
    proptest::collection::vec(any::<bool>(), 0..300).prop_map(BitString::from_bits)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bitstring_pack_round_trip(b in bits()) {
        prop_assert_eq!(BitString::unpack(&b.pack(), b.len()), Some(b.clone()));
        prop_assert_eq!(BitString::parse(&b.to_string()), Some(b));
    }

    #[test]
    fn rref_is_idempotent_and_spans(rows in proptest::collection::vec(any::<u16>(), 0..12)) {
        let rows: Vec<u128> = rows.into_iter().map(u128::from).collect();
        let r = rref(&rows);
        prop_assert_eq!(rref(&r), r.clone());
        let s = Subspace::span(16, &rows).unwrap();
        for v in rows {
            prop_assert!(s.contains(v));
        }
        prop_assert_eq!(s.dim(), r.len());
    }

    #[test]
    fn sampled_subspace_and_perp_are_orthogonal(seed in any::<u64>(), half in 2u16..=16) {
        let lambda = 2 * half;
        let s = Subspace::sample(&mut ChaCha20Rng::seed_from_u64(seed), lambda);
        let p = s.perp();
        prop_assert_eq!(s.dim() + p.dim(), lambda as usize);
        for &a in s.basis() {
            for &b in p.basis() {
                prop_assert!((a & b).count_ones() % 2 == 0);
            }
        }
    }

    #[test]
    fn random_programs_are_deterministic_and_round_trip(seed in any::<u64>(), n in 1u16..=8, m in 1u16..=8, ram in 0u16..=8) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let p = corpus::random_program(&mut rng, n, m, ram);
        prop_assert_eq!(Program::decode(&p.encode()).unwrap(), p.clone());
        let wrapped = OracleProgram::Plain(p.clone());
        prop_assert_eq!(OracleProgram::decode(&wrapped.encode()).unwrap(), wrapped);
        let x = BitString::from_uint(seed, n as usize);
        let ram0 = RamImage::zeroed(ram as usize);
        let a = eval_program(&p, &ram0, &x).unwrap();
        prop_assert_eq!(a.1.len(), m as usize);
        prop_assert_eq!(a, eval_program(&p, &ram0, &x).unwrap());
    }

    #[test]
    fn sealed_payloads_reject_any_bit_flip(seed in any::<u64>(), msg in proptest::collection::vec(any::<u8>(), 1..64), flip in any::<usize>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let kp = MasterKeypair::generate(&mut rng);
        let ct = pk_encrypt(&kp.public(), &msg, &mut rng).unwrap();
        prop_assert_eq!(pk_decrypt(&kp, &ct).unwrap(), msg);
        let mut bytes = ct.into_bytes();
        let i = flip % (bytes.len() * 8);
        bytes[i / 8] ^= 1 << (i % 8);
        prop_assert!(pk_decrypt(&kp, &semiq_core::crypt::SealedPayload::from_bytes(bytes)).is_err());
    }

    #[test]
    fn answers_round_trip(b in bits()) {
        for a in [OracleAnswer::Bottom, OracleAnswer::Output(b.clone())] {
            prop_assert_eq!(OracleAnswer::decode(&a.encode()).unwrap(), a);
        }
    }

    #[test]
    fn tails_shrink_with_repetitions(w in 0u64..60, delta in 0.01f64..0.5) {
        let w = 2 * w + 1;
        let a = FtParams::with_repetitions(w, delta).tail();
        let b = FtParams::with_repetitions(w + 2, delta).tail();
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn prf_is_a_function(key in any::<[u8; 32]>(), i in any::<u64>()) {
        let k = PrfKey::from_bytes(key);
        prop_assert_eq!(k.prf(i), k.prf(i));
        prop_assert_ne!(k.prf(i), k.prf(i.wrapping_add(1)));
    }
}

#[test]
fn noiseless_measurements_land_in_their_cosets() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let hw = Hardware::noiseless();
    for _ in 0..200 {
        let s = Subspace::sample(&mut rng, 16);
        let (x, z) = (rand::Rng::gen::<u16>(&mut rng) as u128, rand::Rng::gen::<u16>(&mut rng) as u128);
        let h = hw.prepare_coset_state(s.clone(), x, z, 0.0);
        assert!(s.contains(hw.measure_computational(&h, &mut rng).unwrap() ^ x));
        let h = hw.prepare_coset_state(s.clone(), x, z, 0.0);
        assert!(s.perp().contains(hw.measure_hadamard(&h, &mut rng).unwrap() ^ z));
    }
    assert_eq!((hw.live(), hw.consumed()), (0, 400));
}
