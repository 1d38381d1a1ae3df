use hsnn_core::accumulator::{accumulate_forward, AccumulatorConfig};
use hsnn_core::cost::allocate_cores;
use hsnn_core::events::{decode_events, encode_events, Event, EventStream, LoadOptions};
use hsnn_core::hw::{counter_bits_for, run_layer, PartitionPlan};
use hsnn_core::model::LayerCensus;
use hsnn_core::spiking::{cuba_lif_step, spk_conv_forward};
use hsnn_core::cost::DeviceProfile;
use hsnn_core::{CubaLifParams, CubaLifState, SpikeTensor, Tensor};
use proptest::prelude::*;

/// `(shape, bits)` with T a multiple of some divisor we can pick from.
fn spike_block(max_t: usize) -> impl Strategy<Value = ([usize; 4], Vec<bool>)> {
    (1..4usize, 1..4usize, 1..4usize, 1..=max_t).prop_flat_map(|(c, h, w, t)| {
        let n = c * h * w * t;
        (Just([c, h, w, t]), proptest::collection::vec(any::<bool>(), n))
    })
}

fn divisors(t: usize) -> Vec<usize> {
    (1..=t).filter(|i| t % i == 0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accumulator_counts_are_bounded_and_exact((shape, bits) in spike_block(12), pick in any::<prop::sample::Index>()) {
        let [c, h, w, t] = shape;
        let ds = divisors(t);
        let i = ds[pick.index(ds.len())];
        let x = SpikeTensor::<f64>::from_bits(shape, &bits).unwrap();
        let cfg = AccumulatorConfig::new(i, t).unwrap();
        let a = accumulate_forward(&x, &cfg).unwrap();
        prop_assert_eq!(a.tensor().shape(), &[c * t / i, h, w][..]);
        let mut total = 0.0;
        for j in 0..c * t / i {
            for y in 0..h {
                for xx in 0..w {
                    let v = a.tensor().get(&[j, y, xx]);
                    prop_assert!(v >= 0.0 && v <= i as f64 && v.fract() == 0.0);
                    let expect = (0..i).filter(|&k| x.get(j % c, y, xx, i * (j / c) + k)).count();
                    prop_assert_eq!(v, expect as f64);
                    total += v;
                }
            }
        }
        prop_assert_eq!(total as usize, x.count());
    }

    #[test]
    fn accumulator_is_exact_in_f32((shape, bits) in spike_block(24)) {
        let t = shape[3];
        let x64 = SpikeTensor::<f64>::from_bits(shape, &bits).unwrap();
        let x32 = SpikeTensor::<f32>::from_bits(shape, &bits).unwrap();
        let cfg = AccumulatorConfig::new(t, t).unwrap();
        let a = accumulate_forward(&x64, &cfg).unwrap();
        let b = accumulate_forward(&x32, &cfg).unwrap();
        for (p, q) in a.tensor().data().iter().zip(b.tensor().data()) {
            prop_assert_eq!(*p, f64::from(*q));
        }
    }

    #[test]
    fn interval_equal_to_t_sums_time_and_interval_one_is_identity((shape, bits) in spike_block(8)) {
        let [c, h, w, t] = shape;
        let x = SpikeTensor::<f64>::from_bits(shape, &bits).unwrap();
        let whole = accumulate_forward(&x, &AccumulatorConfig::new(t, t).unwrap()).unwrap();
        let ones = accumulate_forward(&x, &AccumulatorConfig::new(1, t).unwrap()).unwrap();
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let n = (0..t).filter(|&k| x.get(ch, y, xx, k)).count();
                    prop_assert_eq!(whole.tensor().get(&[ch, y, xx]), n as f64);
                    for k in 0..t {
                        prop_assert_eq!(ones.tensor().get(&[k * c + ch, y, xx]) == 1.0, x.get(ch, y, xx, k));
                    }
                }
            }
        }
    }

    #[test]
    fn event_files_round_trip(mut ts in proptest::collection::vec((0u32..1_000_000, 0u16..128, 0u16..128, 0u8..2), 0..300)) {
        ts.sort_by_key(|e| e.0);
        let stream = EventStream {
            width: 128,
            height: 128,
            events: ts.iter().map(|&(t, x, y, p)| Event { t, x, y, polarity: p }).collect(),
        };
        let back = decode_events(&encode_events(&stream), LoadOptions::default()).unwrap();
        prop_assert_eq!(back, stream);
    }

    #[test]
    fn spiking_conv_emits_only_zeros_and_ones(seed in any::<u64>(), t in 1..6usize) {
        let (x, w) = conv_inputs(seed, t);
        let out = spk_conv_forward(&x, &w, None, 1, 1, &CubaLifParams::default()).unwrap();
        prop_assert!(out.tensor().data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn infinite_threshold_never_fires(seed in any::<u64>(), t in 1..6usize) {
        let (x, w) = conv_inputs(seed, t);
        let p = CubaLifParams { threshold: f64::INFINITY, ..CubaLifParams::default() };
        let out = spk_conv_forward(&x, &w, None, 1, 1, &p).unwrap();
        prop_assert_eq!(out.count(), 0);
    }

    #[test]
    fn zero_threshold_fires_on_positive_drive(drive in proptest::collection::vec(0.001f64..5.0, 1..40)) {
        let p = CubaLifParams { threshold: 0.0, ..CubaLifParams::default() };
        let x = Tensor::from_vec(&[drive.len()], drive.clone()).unwrap();
        let step = cuba_lif_step(&CubaLifState::zeros(&[drive.len()]).unwrap(), &x, &p, "l", 0).unwrap();
        prop_assert!(step.spikes.data().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn neurons_evolve_independently(
        drive in proptest::collection::vec(proptest::collection::vec(-2.0f64..3.0, 6), 1..8),
        perm_seed in any::<u64>(),
    ) {
        // drive[t][n]; permuting neurons permutes every output identically
        let n = 6;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = perm_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = CubaLifParams::default();
        let (mut a, mut b) = (CubaLifState::zeros(&[n]).unwrap(), CubaLifState::zeros(&[n]).unwrap());
        for (t, row) in drive.iter().enumerate() {
            let xa = Tensor::from_vec(&[n], row.clone()).unwrap();
            let xb = Tensor::from_vec(&[n], perm.iter().map(|&j| row[j]).collect()).unwrap();
            let sa = cuba_lif_step(&a, &xa, &p, "l", t).unwrap();
            let sb = cuba_lif_step(&b, &xb, &p, "l", t).unwrap();
            for (k, &j) in perm.iter().enumerate() {
                prop_assert_eq!(sb.spikes.data()[k], sa.spikes.data()[j]);
                prop_assert_eq!(sb.state.v.data()[k], sa.state.v.data()[j]);
            }
            a = sa.state;
            b = sb.state;
        }
    }

    #[test]
    fn more_neurons_never_need_fewer_cores(base in proptest::collection::vec(0usize..100_000, 1..6), extra in 1usize..50_000, at in any::<prop::sample::Index>()) {
        let profile = DeviceProfile::default().neuromorphic;
        let census = |ns: &[usize]| ns.iter().enumerate().map(|(i, &n)| LayerCensus { layer: format!("conv{}", i + 1), neurons: n }).collect::<Vec<_>>();
        let mut grown = base.clone();
        grown[at.index(base.len())] += extra;
        let small = allocate_cores(&census(&base), &profile);
        let big = allocate_cores(&census(&grown), &profile);
        prop_assert!(big.total_cores >= small.total_cores);
        prop_assert!(big.chips >= small.chips);
    }

    #[test]
    fn correctly_sized_counters_never_saturate(neurons in 1usize..300, pick in 0usize..6, seed in any::<u64>()) {
        let (t, i) = [(20, 5), (20, 4), (20, 20), (12, 3), (16, 16), (10, 1)][pick];
        let spikes: Vec<bool> = (0..neurons * t).map(|k| (seed.rotate_left(k as u32 % 64) ^ k as u64) & 1 == 1).collect();
        let plan = PartitionPlan::new(neurons, t, 128).unwrap();
        let run = run_layer(&spikes, &plan, i, Some(counter_bits_for(i)), false).unwrap();
        prop_assert_eq!(run.saturation_events, 0);
    }
}

fn conv_inputs(seed: u64, t: usize) -> (SpikeTensor<f64>, Tensor<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<bool> = (0..2 * 6 * 6 * t).map(|_| rng.gen_bool(0.3)).collect();
    let x = SpikeTensor::from_bits([2, 6, 6, t], &bits).unwrap();
    let w = Tensor::from_fn(&[3, 2, 3, 3], |_| rng.gen_range(-1.5..1.5)).unwrap();
    (x, w)
}
