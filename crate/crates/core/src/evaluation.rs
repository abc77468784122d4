//! Squared-L2 ranking, cumulative match curves, repeated single-shot trials
//! and (γ, β) grid search.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;

use crate::embedding::EmbeddingNetwork;
use crate::error::{Error, Result};
use crate::gallery::MixedGallery;
use crate::loss::LossConfig;
use crate::rng;
use crate::scalar::{sq_dist, Scalar};
use crate::training::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalProtocol {
    /// Rank cutoffs, strictly increasing, all `>= 1`.
    pub ks: Vec<usize>,
    pub trials: usize,
    /// Also report each dataset tag against a gallery restricted to that tag.
    pub per_dataset: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol { ks: vec![1, 5, 10, 20], trials: 10, per_dataset: true }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        validate_ks(&self.ks)?;
        if self.trials == 0 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        Ok(())
    }
}

fn validate_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("ks", format!("must be non-empty, >= 1 and strictly increasing, got {ks:?}")));
    }
    Ok(())
}

/// Match rates at each cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcCurve {
    pub ks: Vec<usize>,
    pub rates: Vec<f64>,
    /// Queries that were scored.
    pub queries: usize,
    /// Queries skipped because the gallery holds no sample of their identity.
    pub excluded: usize,
}

impl CmcCurve {
    pub fn rate_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.rates[i])
    }

    pub fn top1(&self) -> f64 {
        self.rate_at(1).unwrap_or(f64::NAN)
    }
}

/// Trial-averaged curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcResult {
    /// Queries from every dataset against the whole mixed gallery.
    pub overall: CmcCurve,
    pub per_dataset: BTreeMap<String, CmcCurve>,
    pub trials: usize,
    /// Identities with a single sample; never used as queries.
    pub excluded_identities: usize,
}

/// `d[i][j] = ‖q_i − g_j‖²`.
pub fn pairwise_sq_distances<T: Scalar>(queries: &[Vec<T>], gallery: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let dim = queries.first().or(gallery.first()).map_or(0, Vec::len);
    if let Some(v) = queries.iter().chain(gallery).find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
    }
    Ok(queries.iter().map(|q| gallery.iter().map(|g| sq_dist(q, g)).collect()).collect())
}

pub fn cmc_curve<T: Scalar, I: PartialEq>(
    query_feats: &[Vec<T>],
    query_ids: &[I],
    gallery_feats: &[Vec<T>],
    gallery_ids: &[I],
    ks: &[usize],
) -> Result<CmcCurve> {
    if query_feats.len() != query_ids.len() || gallery_feats.len() != gallery_ids.len() {
        return Err(Error::Evaluation("feature and id counts differ".into()));
    }
    let dist = pairwise_sq_distances(query_feats, gallery_feats)?;
    cmc_from_distances(&dist, query_ids, gallery_ids, ks)
}

/// CMC from a precomputed distance matrix (`queries x gallery`).
///
/// Each gallery row is ranked by ascending distance, ties broken by gallery
/// position. Only the ordering of each row matters.
pub fn cmc_from_distances<T: Scalar, I: PartialEq>(
    dist: &[Vec<T>],
    query_ids: &[I],
    gallery_ids: &[I],
    ks: &[usize],
) -> Result<CmcCurve> {
    validate_ks(ks)?;
    if gallery_ids.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if dist.len() != query_ids.len() || dist.iter().any(|row| row.len() != gallery_ids.len()) {
        return Err(Error::Evaluation("distance matrix does not match id lists".into()));
    }
    let mut hits = vec![0usize; ks.len()];
    let (mut queries, mut excluded) = (0, 0);
    let mut order: Vec<usize> = Vec::with_capacity(gallery_ids.len());
    for (row, qid) in dist.iter().zip(query_ids) {
        order.clear();
        order.extend(0..gallery_ids.len());
        order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal));
        let Some(first) = order.iter().position(|&j| gallery_ids[j] == *qid) else {
            excluded += 1;
            continue;
        };
        queries += 1;
        for (h, &k) in hits.iter_mut().zip(ks) {
            if first < k {
                *h += 1;
            }
        }
    }
    if queries == 0 {
        return Err(Error::Evaluation("no query has a matching gallery identity".into()));
    }
    let rates = hits.iter().map(|&h| h as f64 / queries as f64).collect();
    Ok(CmcCurve { ks: ks.to_vec(), rates, queries, excluded })
}

/// Repeated single-shot evaluation: in every trial each identity with at
/// least two samples contributes one random query and the rest of its
/// samples to the gallery. Single-sample identities stay in the gallery as
/// distractors. Rates are averaged over trials.
pub fn evaluate_repeated<T: Scalar, R: Rng + ?Sized>(
    net: &EmbeddingNetwork<T>,
    gallery: &MixedGallery<T>,
    protocol: &EvalProtocol,
    rng: &mut R,
) -> Result<CmcResult> {
    protocol.validate()?;
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let feats: Vec<Vec<T>> = gallery.samples().iter().map(|s| net.embed(&s.input)).collect::<Result<_>>()?;
    let excluded_identities = gallery.index().values().filter(|v| v.len() < 2).count();
    let tags = if protocol.per_dataset { gallery.dataset_tags() } else { Vec::new() };

    let mut overall_trials = Vec::with_capacity(protocol.trials);
    let mut tag_trials: BTreeMap<String, Vec<CmcCurve>> = BTreeMap::new();
    for _ in 0..protocol.trials {
        let mut is_query = vec![false; gallery.len()];
        for members in gallery.index().values().filter(|v| v.len() >= 2) {
            is_query[members[rng.random_range(0..members.len())]] = true;
        }
        let curve = |keep: &dyn Fn(usize) -> bool| -> Result<CmcCurve> {
            let (q, g): (Vec<usize>, Vec<usize>) = (0..gallery.len()).filter(|&i| keep(i)).partition(|&i| is_query[i]);
            let pick = |ix: &[usize]| -> (Vec<Vec<T>>, Vec<&str>) {
                (
                    ix.iter().map(|&i| feats[i].clone()).collect(),
                    ix.iter().map(|&i| gallery.sample(i).person_id.as_str()).collect(),
                )
            };
            let ((qf, qi), (gf, gi)) = (pick(&q), pick(&g));
            cmc_curve(&qf, &qi, &gf, &gi, &protocol.ks)
        };
        overall_trials.push(curve(&|_| true)?);
        for tag in &tags {
            let c = curve(&|i| gallery.sample(i).dataset_tag == *tag)?;
            tag_trials.entry(tag.clone()).or_default().push(c);
        }
    }
    Ok(CmcResult {
        overall: average(&overall_trials),
        per_dataset: tag_trials.into_iter().map(|(t, c)| (t, average(&c))).collect(),
        trials: protocol.trials,
        excluded_identities,
    })
}

fn average(curves: &[CmcCurve]) -> CmcCurve {
    let n = curves.len() as f64;
    let first = &curves[0];
    let rates = (0..first.ks.len()).map(|i| curves.iter().map(|c| c.rates[i]).sum::<f64>() / n).collect();
    CmcCurve { ks: first.ks.clone(), rates, queries: first.queries, excluded: first.excluded }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub gamma: f64,
    pub beta: f64,
    pub result: CmcResult,
}

/// Trains one model per `(γ, β)` from the same initial network and seed,
/// evaluates each on `eval_gallery` with the same split stream, and returns
/// rows sorted by overall top-1 (descending, ties in grid order).
pub fn grid_search_weights<T: Scalar>(
    net_init: &EmbeddingNetwork<T>,
    train_gallery: &MixedGallery<T>,
    eval_gallery: &MixedGallery<T>,
    gammas: &[T],
    betas: &[T],
    base_cfg: &TrainConfig<T>,
    protocol: &EvalProtocol,
) -> Result<Vec<GridRow>> {
    if gammas.is_empty() || betas.is_empty() {
        return Err(Error::InvalidArgument("grid axes must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(gammas.len() * betas.len());
    for &gamma in gammas {
        for &beta in betas {
            let cfg = TrainConfig { loss: LossConfig::new(base_cfg.loss.alpha, gamma, beta)?, ..base_cfg.clone() };
            let (net, _) = train(net_init.clone(), train_gallery, &cfg)?;
            let mut split = rng::stream(base_cfg.seed, rng::STREAM_SPLIT);
            let result = evaluate_repeated(&net, eval_gallery, protocol, &mut split)?;
            rows.push(GridRow { gamma: gamma.as_f64(), beta: beta.as_f64(), result });
        }
    }
    rows.sort_by(|a, b| b.result.overall.top1().total_cmp(&a.result.overall.top1()));
    Ok(rows)
}

/// `gamma,beta,dataset,top<k>...,trials`. The mixed-gallery curve is written
/// under the dataset name `all`.
pub fn write_cmc_table<W: Write>(rows: &[GridRow], ks: &[usize], comments: &[String], mut w: W) -> std::io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    write!(w, "gamma,beta,dataset")?;
    for k in ks {
        write!(w, ",top{k}")?;
    }
    writeln!(w, ",trials")?;
    for row in rows {
        let r = &row.result;
        let curves = std::iter::once(("all", &r.overall)).chain(r.per_dataset.iter().map(|(t, c)| (t.as_str(), c)));
        for (tag, c) in curves {
            write!(w, "{},{},{tag}", row.gamma, row.beta)?;
            for &k in ks {
                match c.rate_at(k) {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w, ",{}", r.trials)?;
        }
    }
    Ok(())
}

/// Long format `k,rate` for one curve.
pub fn write_cmc_long<W: Write>(curve: &CmcCurve, comments: &[String], mut w: W) -> std::io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "k,rate")?;
    for (k, r) in curve.ks.iter().zip(&curve.rates) {
        writeln!(w, "{k},{r}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::LayerParams;
    use crate::gallery::{generate_synthetic, merge_galleries, SyntheticConfig};
    use proptest::prelude::*;

    fn identity_net(d: usize) -> EmbeddingNetwork<f64> {
        let mut w = vec![0.0; d * d];
        (0..d).for_each(|i| w[i * d + i] = 1.0);
        EmbeddingNetwork::from_layers(&[d, d], vec![LayerParams { weights: w, bias: vec![0.0; d] }]).unwrap()
    }

    #[test]
    fn distances_by_hand() {
        let d = pairwise_sq_distances(&[vec![0.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(d, vec![vec![1.0, 4.0]]);
        let x = vec![vec![0.3, -2.0, 5.0]];
        assert_eq!(pairwise_sq_distances(&x, &x).unwrap(), vec![vec![0.0]]);
        assert!(pairwise_sq_distances(&[vec![0.0]], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn distance_matrix_transposes() {
        let a = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]];
        let b = vec![vec![3.0, 1.0], vec![-2.0, 0.0]];
        let ab = pairwise_sq_distances(&a, &b).unwrap();
        let ba = pairwise_sq_distances(&b, &a).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(ab[i][j], ba[j][i]);
            }
        }
    }

    #[test]
    fn ranking_by_hand() {
        let g = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let c = cmc_curve(&[vec![0.0, 0.0]], &["A"], &g, &["B", "A", "C"], &[1, 2, 3]).unwrap();
        assert_eq!(c.rates, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn strictly_closest_match_is_rank_one() {
        let g = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0]];
        let c = cmc_curve(&[vec![0.0, 0.0]], &["A"], &g, &["A", "B", "C"], &[1]).unwrap();
        assert_eq!(c.rates, vec![1.0]);
    }

    #[test]
    fn ties_break_by_gallery_position() {
        let g = vec![vec![1.0], vec![-1.0]];
        let c = cmc_curve(&[vec![0.0]], &["A"], &g, &["B", "A"], &[1, 2]).unwrap();
        assert_eq!(c.rates, vec![0.0, 1.0]);
        let c = cmc_curve(&[vec![0.0]], &["A"], &g, &["A", "B"], &[1, 2]).unwrap();
        assert_eq!(c.rates, vec![1.0, 1.0]);
    }

    #[test]
    fn unmatched_queries_are_excluded() {
        let g = vec![vec![1.0], vec![2.0]];
        let c = cmc_curve(&[vec![0.0], vec![0.0]], &["A", "Z"], &g, &["A", "B"], &[1]).unwrap();
        assert_eq!((c.queries, c.excluded, c.rates[0]), (1, 1, 1.0));
        assert!(matches!(cmc_curve::<f64, &str>(&[vec![0.0]], &["A"], &[], &[], &[1]), Err(Error::EmptyGallery)));
        assert!(cmc_curve(&[vec![0.0]], &["A"], &g, &["A", "B"], &[2, 1]).is_err());
    }

    #[test]
    fn zero_noise_identity_net_is_perfect() {
        let cfg = SyntheticConfig { n_ids: 12, per_id: 3, dim: 5, noise: 0.0, ..Default::default() };
        let g: MixedGallery<f64> = generate_synthetic(&cfg).unwrap();
        let p = EvalProtocol { trials: 10, ..Default::default() };
        let r = evaluate_repeated(&identity_net(5), &g, &p, &mut rng::from_seed(3)).unwrap();
        assert_eq!(r.overall.rates, vec![1.0; 4]);
        assert_eq!(r.overall.queries, 12);
        assert_eq!(r.trials, 10);
    }

    #[test]
    fn constant_trials_average_to_the_constant() {
        // Two samples per identity at distinct points: every split gives the same ranking.
        let cfg = SyntheticConfig { n_ids: 6, per_id: 2, dim: 3, noise: 0.0, ..Default::default() };
        let g: MixedGallery<f64> = generate_synthetic(&cfg).unwrap();
        let one = EvalProtocol { trials: 1, ..Default::default() };
        let ten = EvalProtocol { trials: 10, ..Default::default() };
        let a = evaluate_repeated(&identity_net(3), &g, &one, &mut rng::from_seed(0)).unwrap();
        let b = evaluate_repeated(&identity_net(3), &g, &ten, &mut rng::from_seed(9)).unwrap();
        assert_eq!(a.overall.rates, b.overall.rates);
    }

    #[test]
    fn repeated_evaluation_is_seeded_and_per_dataset() {
        let a: MixedGallery<f64> =
            generate_synthetic(&SyntheticConfig { n_ids: 5, per_id: 3, dim: 4, tag: "a".into(), ..Default::default() })
                .unwrap();
        let b: MixedGallery<f64> = generate_synthetic(&SyntheticConfig {
            n_ids: 4,
            per_id: 2,
            dim: 4,
            seed: 1,
            tag: "b".into(),
            ..Default::default()
        })
        .unwrap();
        let lone = MixedGallery::new(vec![crate::gallery::Sample::new("solo", "x", "b", vec![0.0; 4])], 4).unwrap();
        let g = merge_galleries(&[a, b, lone]).unwrap();
        let net = EmbeddingNetwork::init(&[4, 3], 0).unwrap();
        let p = EvalProtocol::default();
        let r1 = evaluate_repeated(&net, &g, &p, &mut rng::from_seed(5)).unwrap();
        let r2 = evaluate_repeated(&net, &g, &p, &mut rng::from_seed(5)).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.per_dataset.keys().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(r1.excluded_identities, 1);
        assert_eq!(r1.overall.queries, 9);
        for c in std::iter::once(&r1.overall).chain(r1.per_dataset.values()) {
            assert!(c.rates.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn grid_rows_and_table() {
        let g: MixedGallery<f64> =
            generate_synthetic(&SyntheticConfig { n_ids: 6, per_id: 3, dim: 4, ..Default::default() }).unwrap();
        let net = EmbeddingNetwork::init(&[4, 6, 3], 0).unwrap();
        let cfg = TrainConfig { epochs: 3, p: 3, k: 3, triplets: 20, ..Default::default() };
        let p = EvalProtocol { trials: 2, ..Default::default() };
        let rows = grid_search_weights(&net, &g, &g, &[1.0], &[0.3, 0.5], &cfg, &p).unwrap();
        assert_eq!(rows.len(), 2);
        let mut keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.gamma, r.beta)).collect();
        keys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(keys, [(1.0, 0.3), (1.0, 0.5)]);
        assert!(rows.windows(2).all(|w| w[0].result.overall.top1() >= w[1].result.overall.top1()));

        let dup = grid_search_weights(&net, &g, &g, &[1.0, 1.0], &[0.3], &cfg, &p).unwrap();
        assert_eq!(dup[0].result, dup[1].result);
        let single = grid_search_weights(&net, &g, &g, &[1.0], &[0.3], &cfg, &p).unwrap();
        let (trained, _) =
            train(net.clone(), &g, &TrainConfig { loss: LossConfig::new(1.0, 1.0, 0.3).unwrap(), ..cfg.clone() })
                .unwrap();
        let direct = evaluate_repeated(&trained, &g, &p, &mut rng::stream(cfg.seed, rng::STREAM_SPLIT)).unwrap();
        assert_eq!(single[0].result, direct);
        assert!(grid_search_weights(&net, &g, &g, &[], &[0.3], &cfg, &p).is_err());

        let mut buf = Vec::new();
        write_cmc_table(&single, &p.ks, &[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("gamma,beta,dataset,top1,top5,top10,top20,trials\n1,0.3,all,"));
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn cmc_ignores_monotone_distance_transforms(
            dist in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 6), 1..5),
            qids in proptest::collection::vec(0u8..3, 5),
            gids in proptest::collection::vec(0u8..3, 6),
            offset in -3.0f64..3.0,
        ) {
            let q = &qids[..dist.len()];
            let ks = [1, 2, 3, 6];
            let Ok(base) = cmc_from_distances(&dist, q, &gids, &ks) else { return Ok(()) };
            let sq: Vec<Vec<f64>> = dist.iter().map(|r| r.iter().map(|d| d * d).collect()).collect();
            let off: Vec<Vec<f64>> = dist.iter().map(|r| r.iter().map(|d| d + offset).collect()).collect();
            prop_assert_eq!(&cmc_from_distances(&sq, q, &gids, &ks).unwrap(), &base);
            prop_assert_eq!(&cmc_from_distances(&off, q, &gids, &ks).unwrap(), &base);
            prop_assert!(base.rates.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
