use pkml::synthdata::{
    baseline_human_pk, gen_crossspecies, gen_dataset1, gen_physio, make_drug_graph, sample_patients, CL_EXPONENT,
    V_EXPONENT,
};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn patient_medians_near_population_values() {
    let ps = sample_patients(1000, 42).unwrap();
    for (got, want) in [
        (median(ps.iter().map(|p| p.cl).collect()), 5.0),
        (median(ps.iter().map(|p| p.v1).collect()), 30.0),
        (median(ps.iter().map(|p| p.v2).collect()), 50.0),
        (median(ps.iter().map(|p| p.q).collect()), 8.0),
    ] {
        assert!((got / want - 1.0).abs() < 0.1, "median {got} vs {want}");
    }
}

#[test]
fn dataset1_split_and_grid() {
    let d = gen_dataset1(1000, 42).unwrap();
    assert_eq!((d.train.len(), d.test.len()), (800, 200));
    let mut ids: Vec<usize> = d
        .train
        .iter()
        .chain(&d.test)
        .map(|p| p.meta.subject_id.unwrap())
        .collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..1000).collect::<Vec<_>>());
    for p in d.train.iter().chain(&d.test) {
        assert_eq!(p.len(), 50);
        assert_eq!((p.times[0], p.times[49]), (0.0, 24.0));
    }
}

#[test]
fn generators_are_pure_functions_of_seed() {
    assert_eq!(gen_dataset1(50, 7).unwrap(), gen_dataset1(50, 7).unwrap());
    assert_ne!(gen_dataset1(50, 7).unwrap(), gen_dataset1(50, 8).unwrap());
    assert_eq!(gen_physio(100, 7).unwrap(), gen_physio(100, 7).unwrap());
    assert_eq!(gen_crossspecies(5, 7).unwrap(), gen_crossspecies(5, 7).unwrap());
}

#[test]
fn physio_is_compliant_and_correlated() {
    let v = gen_physio(2000, 42).unwrap();
    assert_eq!(v.len(), 2000);
    assert_eq!(v.iter().filter(|p| p.violates()).count(), 0);
    assert!(v.iter().all(|p| p.weight_kg >= 40.0 && (20.0..70.0).contains(&p.age)));
    let n = v.len() as f64;
    let (mw, ml) = (
        v.iter().map(|p| p.weight_kg).sum::<f64>() / n,
        v.iter().map(|p| p.liver_l).sum::<f64>() / n,
    );
    let cov: f64 = v.iter().map(|p| (p.weight_kg - mw) * (p.liver_l - ml)).sum();
    let sw: f64 = v.iter().map(|p| (p.weight_kg - mw).powi(2)).sum::<f64>().sqrt();
    let sl: f64 = v.iter().map(|p| (p.liver_l - ml).powi(2)).sum::<f64>().sqrt();
    let r = cov / (sw * sl);
    assert!(r > 0.8, "corr {r}");
}

#[test]
fn crossspecies_obeys_scaling_laws() {
    let d = gen_crossspecies(50, 42).unwrap();
    assert_eq!(d.records.len(), 150);
    for drug in &d.drugs {
        assert!(drug.graph.is_connected());
        assert!((5..=15).contains(&drug.graph.num_nodes()));
        let recs: Vec<_> = d.records.iter().filter(|r| r.drug_id == drug.drug_id).collect();
        let w = |i: usize| d.species[recs[i].species_index].weight_kg;
        let cl0 = recs[0].cl / w(0).powf(CL_EXPONENT);
        let v0 = recs[0].v / w(0).powf(V_EXPONENT);
        for (i, r) in recs.iter().enumerate() {
            assert!((r.cl / w(i).powf(CL_EXPONENT) / cl0 - 1.0).abs() < 1e-12);
            assert!((r.v / w(i).powf(V_EXPONENT) / v0 - 1.0).abs() < 1e-12);
            assert_eq!(r.profile.concentrations[0], 1.0);
            assert_eq!(r.dose_mg, w(i));
        }
    }
}

#[test]
fn heavier_species_decay_slower() {
    let d = gen_crossspecies(3, 1).unwrap();
    for drug in 0..3 {
        let last = |s: usize| {
            d.records
                .iter()
                .find(|r| r.drug_id == drug && r.species_index == s)
                .unwrap()
                .profile
                .concentrations[49]
        };
        assert!(last(0) < last(1) && last(1) < last(2));
    }
}

#[test]
fn distinct_graphs_give_distinct_pk() {
    let a = baseline_human_pk(&make_drug_graph(0, 42));
    let b = baseline_human_pk(&make_drug_graph(1, 42));
    assert_ne!(a, b);
}
