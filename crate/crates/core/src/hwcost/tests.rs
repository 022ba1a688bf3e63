use super::*;
use crate::devlib::builtin_device_table;
use approx::assert_relative_eq;

fn homog(t: &Topology, dev: &str) -> HybridConfig {
    HybridConfig::homogeneous(dev, t.conv_count(), Profile::Cifar10)
}

#[test]
fn tiles_are_counted_per_device() {
    // Four layers needing 1, 1, 3 and 4 tiles at 4 arrays per tile.
    let devs = builtin_device_table();
    let t = Topology::parse(
        "conv (3,128,k=1,s=1,p=0), conv (128,128,k=1,s=1,p=0), conv (128,128,k=3,s=1,p=1), conv (128,1664,k=1,s=1,p=0), FC",
        (3, 4, 4),
        10,
    )
    .unwrap();
    let cfg = HybridConfig::new(
        vec!["SRAM".into(), "SRAM".into(), "PCM".into(), "FeFET".into()],
        Profile::Cifar10,
        AdcPolicy::Layerwise,
    );
    let plan = plan_chip(&t, &cfg, &devs, &CrossbarConfig::default(), 4).unwrap();
    let crossbars: Vec<usize> = plan.layers.iter().take(4).map(|l| l.crossbars).collect();
    assert_eq!(crossbars, vec![4, 4, 9, 13]);
    let tiles: Vec<usize> = plan.layers.iter().take(4).map(|l| l.tiles).collect();
    assert_eq!(tiles, vec![1, 1, 3, 4]);
    let by = plan.tiles_by_device();
    assert_eq!(by["SRAM"], 2);
    assert_eq!(by["PCM"], 3);
    assert_eq!(by["FeFET"] - plan.layers[4].tiles, 4);
    assert_eq!(plan.total_tiles, plan.layers.iter().map(|l| l.tiles).sum::<usize>());
    for w in plan.layers.windows(2) {
        assert_eq!(w[0].first_tile + w[0].tiles, w[1].first_tile);
    }
}

#[test]
fn first_vgg_layer_needs_one_tile() {
    let t = Topology::vgg16(32, 10);
    let devs = builtin_device_table();
    let plan = plan_chip(&t, &homog(&t, "PCM"), &devs, &CrossbarConfig::default(), 64).unwrap();
    let l1 = &plan.layers[0];
    assert_eq!((l1.rows, l1.cols, l1.crossbars, l1.tiles), (27, 64, 1, 1));
}

#[test]
fn unknown_device_rejected() {
    let t = Topology::desk_vgg(32, 10);
    let devs = builtin_device_table();
    let mut cfg = homog(&t, "PCM");
    cfg.devices[2] = "RRAM".into();
    assert!(plan_chip(&t, &cfg, &devs, &CrossbarConfig::default(), 64).is_err());
    cfg.devices.pop();
    assert!(plan_chip(&t, &cfg, &devs, &CrossbarConfig::default(), 64).is_err());
}

#[test]
fn area_ratios_on_vgg16() {
    let t = Topology::vgg16(32, 10);
    let devs = builtin_device_table();
    let m = CostModel::default();
    let area = |d: &str| {
        let plan = m.plan(&t, &homog(&t, d), &devs).unwrap();
        imc_area(&plan, &devs, 32.0).unwrap().iter().sum::<f64>()
    };
    let (s, p, f) = (area("SRAM"), area("PCM"), area("FeFET"));
    assert!((115.0..=125.0).contains(&(s / p)), "{}", s / p);
    assert!((1.40..=1.55).contains(&(f / p)), "{}", f / p);

    // Without padding the ratios are exact footprint ratios.
    let unpadded = |d: &str| {
        let plan = m.plan(&t, &homog(&t, d), &devs).unwrap();
        let dev = find_device(&devs, d).unwrap();
        plan.layers.iter().map(|l| l.active_cells as f64 * dev.cell_area_f2()).sum::<f64>()
    };
    assert_relative_eq!(unpadded("SRAM") / unpadded("PCM"), 120.0, max_relative = 1e-12);
}

#[test]
fn single_pcm_cell_area() {
    let devs = builtin_device_table();
    // 4 F² at 32 nm = 4.096e-15 m² = 4.096e-9 mm².
    assert_relative_eq!(devs[1].cell_area_f2() * f2_mm2(32.0), 4.096e-9, max_relative = 1e-12);
}

#[test]
fn programming_energy() {
    let t = Topology::vgg16(32, 10);
    let devs = builtin_device_table();
    let m = CostModel::default();
    let energy = |d: &str| {
        let plan = m.plan(&t, &homog(&t, d), &devs).unwrap();
        prog_energy(&plan, &devs, None).unwrap().iter().sum::<f64>()
    };
    assert_relative_eq!(energy("FeFET") / energy("PCM"), 0.2, max_relative = 1e-12);

    let one = Topology::parse("conv (1,1,k=1,s=1,p=0), FC", (1, 1, 1), 1).unwrap();
    let plan = plan_chip(&one, &homog(&one, "PCM"), &devs, &CrossbarConfig::default(), 64).unwrap();
    // Conv cell only: 8 pulses × 10 pJ.
    assert_relative_eq!(prog_energy(&plan, &devs, Some(8.0)).unwrap()[0], 80e-12, max_relative = 1e-12);
    assert!(prog_energy(&plan, &devs, Some(0.5)).is_err());
    let empty = ChipPlan {
        layers: vec![],
        xbar: CrossbarConfig::default(),
        pes_per_tile: 64,
        total_crossbars: 0,
        total_tiles: 0,
    };
    assert!(prog_energy(&empty, &devs, None).unwrap().is_empty());
}

#[test]
fn adc_rule() {
    let cfg: Vec<String> = ["FeFET", "SRAM", "FeFET", "PCM", "SRAM", "FeFET", "PCM"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(assign_adc_bits(&cfg, Profile::Cifar10, AdcPolicy::Layerwise), vec![4, 2, 3, 4, 2, 3, 4]);
    assert_eq!(assign_adc_bits(&cfg, Profile::TinyImagenet, AdcPolicy::Layerwise), vec![6, 2, 4, 6, 2, 4, 6]);
    assert_eq!(assign_adc_bits(&cfg, Profile::TinyImagenet, AdcPolicy::Uniform), vec![6; 7]);
    assert!("imagenet".parse::<Profile>().is_err());
    assert_eq!("synthetic".parse::<Profile>().unwrap(), Profile::Cifar10);
}

fn plan_with_bits(bits: u32) -> ChipPlan {
    let t = Topology::vgg16(32, 10);
    let devs = builtin_device_table();
    let mut cfg = homog(&t, "PCM");
    cfg.adc_bits = vec![bits; t.conv_count()];
    plan_chip(&t, &cfg, &devs, &CrossbarConfig::default(), 64).unwrap()
}

#[test]
fn adc_scaling() {
    let plan = plan_with_bits(4);
    let n = plan.layers.len();
    let vectors: Vec<u64> = plan.layers.iter().map(|l| l.vectors).collect();
    let sar = AdcSpec::default();
    let a8 = adc_costs(&plan, &vec![8; n], &sar, &vectors).unwrap();
    let a7 = adc_costs(&plan, &vec![7; n], &sar, &vectors).unwrap();
    let a4 = adc_costs(&plan, &vec![4; n], &sar, &vectors).unwrap();
    // With area ∝ 2^b one bit less halves the area.
    assert_relative_eq!(a7.area.iter().sum::<f64>() * 2.0, a8.area.iter().sum::<f64>(), max_relative = 1e-12);
    // With area ∝ b halving the bits halves the area.
    let lin = AdcSpec::linear(2e-4, 0.5e-12, 10, 8);
    let l8 = adc_costs(&plan, &vec![8; n], &lin, &vectors).unwrap();
    let l4 = adc_costs(&plan, &vec![4; n], &lin, &vectors).unwrap();
    assert_relative_eq!(l4.area.iter().sum::<f64>() * 2.0, l8.area.iter().sum::<f64>(), max_relative = 1e-12);
    assert!(a4.area.iter().sum::<f64>() < a7.area.iter().sum::<f64>());
    let zero = adc_costs(&plan, &vec![4; n], &sar, &vec![0; n]).unwrap();
    assert_eq!(zero.energy.iter().sum::<f64>(), 0.0);
    assert!(adc_costs(&plan, &vec![12; n], &sar, &vectors).is_err());
}

#[test]
fn hybrid_adc_area_below_uniform_baseline() {
    let t = Topology::vgg16(32, 10);
    let devs = builtin_device_table();
    let m = CostModel::default();
    let mut devices = vec!["FeFET".to_string(); t.conv_count()];
    devices[0] = "PCM".into();
    devices[1] = "SRAM".into();
    let hybrid = HybridConfig::new(devices, Profile::Cifar10, AdcPolicy::Layerwise);
    let h = m.evaluate(&t, &hybrid, &devs).unwrap();
    let base = m.evaluate(&t, &homog(&t, "FeFET"), &devs).unwrap();
    assert!(h.adc_area_mm2 < base.adc_area_mm2);
}

#[test]
fn density_scales_with_area_and_beats_sram() {
    let t = Topology::vgg16(32, 10);
    let devs = builtin_device_table();
    let m = CostModel::default();
    let cfg = homog(&t, "PCM");
    let plan = m.plan(&t, &cfg, &devs).unwrap();
    let r = m.evaluate(&t, &cfg, &devs).unwrap();
    let mut half = r.clone();
    half.imc_area_mm2 /= 2.0;
    half.adc_area_mm2 /= 2.0;
    let d1 = compute_density(&plan, &r, &m.timing, &m.adc).unwrap();
    let d2 = compute_density(&plan, &half, &m.timing, &m.adc).unwrap();
    assert_relative_eq!(d2, 2.0 * d1, max_relative = 1e-12);

    let hybrid = HybridConfig::new(
        (0..t.conv_count()).map(|i| if i % 2 == 0 { "FeFET" } else { "PCM" }.to_string()).collect(),
        Profile::Cifar10,
        AdcPolicy::Layerwise,
    );
    let h = m.evaluate(&t, &hybrid, &devs).unwrap();
    let s = m.evaluate(&t, &homog(&t, "SRAM"), &devs).unwrap();
    assert!(h.tops_per_mm2 / s.tops_per_mm2 > 1.0);

    let mut zero = r.clone();
    zero.imc_area_mm2 = 0.0;
    zero.adc_area_mm2 = 0.0;
    assert!(matches!(compute_density(&plan, &zero, &m.timing, &m.adc), Err(Error::InvalidModel(_))));
}

#[test]
fn expected_cost_vertices_and_mean() {
    let t = Topology::desk_vgg(32, 10);
    let devs = builtin_device_table();
    let table = LayerCostTable::build(&t, &devs, &CostModel::default()).unwrap();
    let n = t.conv_count();
    let (a, e) = expected_costs(&table, &vec![vec![1.0, 0.0, 0.0]; n]).unwrap();
    for i in 0..n {
        assert_eq!(a[i], table.area[i][0]);
        assert_eq!(e[i], table.energy[i][0]);
    }
    let third = 1.0 / 3.0;
    let (a, _) = expected_costs(&table, &vec![vec![third; 3]; n]).unwrap();
    for (got, row) in a.iter().zip(&table.area) {
        let mean = row.iter().sum::<f64>() / 3.0;
        assert_relative_eq!(*got, mean, max_relative = 1e-12);
    }
    assert!(expected_costs(&table, &vec![vec![0.5, 0.4, 0.0]; n]).is_err());
    let norm = table.normalized(1).unwrap();
    assert!(norm.area.iter().all(|r| r[1] == 1.0));
}

#[test]
fn expected_cost_gradient_matches_finite_differences() {
    let t = Topology::desk_vgg(32, 10);
    let devs = builtin_device_table();
    let table = LayerCostTable::build(&t, &devs, &CostModel::default()).unwrap().normalized(1).unwrap();
    let p = vec![vec![0.2, 0.5, 0.3]; t.conv_count()];
    let h = 1e-4;
    for i in 0..p.len() {
        for j in 0..3 {
            // Move mass between j and the next device to stay normalized.
            let k = (j + 1) % 3;
            let mut up = p.clone();
            up[i][j] += h;
            up[i][k] -= h;
            let mut dn = p.clone();
            dn[i][j] -= h;
            dn[i][k] += h;
            let fd = (expected_costs(&table, &up).unwrap().0[i] - expected_costs(&table, &dn).unwrap().0[i]) / (2.0 * h);
            let analytic = table.area[i][j] - table.area[i][k];
            assert!((fd - analytic).abs() <= 1e-8 * analytic.abs().max(1.0), "{fd} vs {analytic}");
        }
    }
}

#[test]
fn report_csv_round_trip() {
    let t = Topology::desk_vgg(32, 10);
    let devs = builtin_device_table();
    let r = CostModel::default().evaluate(&t, &homog(&t, "FeFET"), &devs).unwrap();
    let back = CostReport::from_csv(&r.to_csv()).unwrap();
    assert_eq!(back.layers, r.layers);
    assert_eq!(back.tops_per_mm2, r.tops_per_mm2);
    let total: f64 = r.layers.iter().map(|l| l.imc_area_mm2).sum();
    assert_eq!(total, r.imc_area_mm2);
    assert!(CostReport::from_csv("layer\n").is_err());
}

#[test]
fn config_text_round_trip() {
    let devs = builtin_device_table();
    let cfg = HybridConfig::new(
        vec!["SRAM".into(), "PCM".into(), "FeFET".into()],
        Profile::TinyImagenet,
        AdcPolicy::Layerwise,
    );
    let text = cfg.to_text(&devs);
    assert_eq!(text, "profile tinyimagenet\nL1 S 6\nL2 P 6\nL3 F 4\n");
    assert_eq!(HybridConfig::parse_text(&text, &devs).unwrap(), cfg);
    assert_eq!(cfg.letters(&devs), "S P F");
    assert!(HybridConfig::parse_text("L2 S 4\n", &devs).is_err());
    assert!(HybridConfig::parse_text("L1 X 4\n", &devs).is_err());
}
