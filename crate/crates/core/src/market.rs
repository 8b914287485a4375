//! Market data model: aligned indicator histories, lookback windows,
//! next-day labels, date splits and a synthetic lead-lag market.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{math, Tensor};

/// Indicator columns of the standard OHLCV layout, in file order.
pub const OHLCV: [&str; 5] = ["open", "high", "low", "close", "volume"];

/// Tickers, indicators and the trading calendar they are aligned on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StockUniverse {
    pub tickers: Vec<String>,
    pub indicator_names: Vec<String>,
    pub calendar: Vec<NaiveDate>,
}

impl StockUniverse {
    pub fn validate(&self) -> Result<()> {
        if self.indicator_names.is_empty() {
            return Err(Error::validation("universe", "no indicators"));
        }
        let mut sorted: Vec<&String> = self.tickers.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation(
                "universe",
                format!("duplicate ticker {}", w[0]),
            ));
        }
        if let Some(w) = self.calendar.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "universe",
                format!("calendar not strictly increasing at {} -> {}", w[0], w[1]),
            ));
        }
        Ok(())
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.indicator_names.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn indicator_index(&self, name: &str) -> Option<usize> {
        self.indicator_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// Stable digest of tickers, indicators and calendar. Checkpoints record
    /// it so a model is never evaluated on a different universe.
    pub fn manifest_hash(&self) -> String {
        let mut buf = String::new();
        for t in &self.tickers {
            buf.push_str(t);
            buf.push('\u{1f}');
        }
        buf.push('\u{1e}');
        for m in &self.indicator_names {
            buf.push_str(m);
            buf.push('\u{1f}');
        }
        buf.push('\u{1e}');
        for d in &self.calendar {
            buf.push_str(&d.to_string());
            buf.push('\u{1f}');
        }
        format!("{:016x}", crate::fnv1a64(buf.as_bytes()))
    }
}

/// Indicator values for every ticker on every calendar day.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketHistory {
    universe: StockUniverse,
    // [ticker][indicator][day]
    values: Vec<f64>,
}

impl MarketHistory {
    /// `values` is laid out ticker-major, then indicator, then day.
    pub fn new(universe: StockUniverse, values: Vec<f64>) -> Result<Self> {
        universe.validate()?;
        let expected = universe.n_tickers() * universe.n_indicators() * universe.n_days();
        if values.len() != expected {
            return Err(Error::validation(
                "history",
                format!("{} values for {expected} cells", values.len()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let d = universe.n_days();
            let m = universe.n_indicators();
            return Err(Error::validation(
                "history",
                format!(
                    "non-finite value for {} {} on {}",
                    universe.tickers[pos / (d * m)],
                    universe.indicator_names[(pos / d) % m],
                    universe.calendar[pos % d]
                ),
            ));
        }
        Ok(Self { universe, values })
    }

    pub fn universe(&self) -> &StockUniverse {
        &self.universe
    }

    pub fn n_tickers(&self) -> usize {
        self.universe.n_tickers()
    }

    pub fn n_days(&self) -> usize {
        self.universe.n_days()
    }

    pub fn n_indicators(&self) -> usize {
        self.universe.n_indicators()
    }

    fn offset(&self, ticker: usize, indicator: usize) -> usize {
        (ticker * self.n_indicators() + indicator) * self.n_days()
    }

    /// All days of one indicator for one ticker.
    pub fn series(&self, ticker: usize, indicator: usize) -> &[f64] {
        let o = self.offset(ticker, indicator);
        &self.values[o..o + self.n_days()]
    }

    pub fn series_mut(&mut self, ticker: usize, indicator: usize) -> &mut [f64] {
        let o = self.offset(ticker, indicator);
        let d = self.n_days();
        &mut self.values[o..o + d]
    }

    pub fn value(&self, ticker: usize, day: usize, indicator: usize) -> f64 {
        self.values[self.offset(ticker, indicator) + day]
    }

    pub fn close_index(&self) -> Result<usize> {
        self.universe
            .indicator_index("close")
            .ok_or_else(|| Error::validation("history", "no `close` indicator"))
    }

    /// History with tickers reordered: new ticker `i` is old ticker `perm[i]`.
    pub fn permute_tickers(&self, perm: &[usize]) -> Result<Self> {
        let mut universe = self.universe.clone();
        universe.tickers = perm
            .iter()
            .map(|&p| self.universe.tickers[p].clone())
            .collect();
        let mut values = Vec::with_capacity(self.values.len());
        for &p in perm {
            for m in 0..self.n_indicators() {
                values.extend_from_slice(self.series(p, m));
            }
        }
        Self::new(universe, values)
    }
}

/// Sample mean and sample standard deviation (n − 1 denominator) of one
/// ticker-indicator block of a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub mean: f64,
    pub std: f64,
}

/// Node features for day `t`: row `i` holds, indicator by indicator, the
/// last `lookback` values of ticker `i` (days `t − lookback + 1 ..= t`).
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorWindow {
    pub day: usize,
    pub lookback: usize,
    /// Per-block z-scored features (constant blocks are all zeros).
    pub features: Tensor,
    /// The same layout without normalization.
    pub raw: Tensor,
    /// `stats[i * M + m]` for ticker `i`, indicator `m`.
    pub stats: Vec<BlockStats>,
}

/// Builds the lookback window ending at day `t`. Uses no data after `t`.
pub fn make_window(history: &MarketHistory, t: usize, lookback: usize) -> Result<IndicatorWindow> {
    if lookback == 0 {
        return Err(Error::validation("lookback", "must be at least 1"));
    }
    if t >= history.n_days() || t + 1 < lookback {
        return Err(Error::range(
            "window",
            format!(
                "day {t} with lookback {lookback} over {} days",
                history.n_days()
            ),
        ));
    }
    let n = history.n_tickers();
    let m = history.n_indicators();
    let width = lookback * m;
    let start = t + 1 - lookback;

    let mut raw = Tensor::zeros(n, width);
    let mut features = Tensor::zeros(n, width);
    let mut stats = Vec::with_capacity(n * m);
    for i in 0..n {
        for ind in 0..m {
            let block = &history.series(i, ind)[start..=t];
            let s = block_stats(block);
            for (k, &v) in block.iter().enumerate() {
                let c = ind * lookback + k;
                raw.set(i, c, v);
                features.set(
                    i,
                    c,
                    if is_constant(&s) {
                        0.0
                    } else {
                        (v - s.mean) / s.std
                    },
                );
            }
            stats.push(s);
        }
    }
    Ok(IndicatorWindow {
        day: t,
        lookback,
        features,
        raw,
        stats,
    })
}

fn block_stats(block: &[f64]) -> BlockStats {
    let n = block.len() as f64;
    let mean = block.iter().sum::<f64>() / n;
    let std = if block.len() < 2 {
        0.0
    } else {
        math::sqrt(block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    };
    BlockStats { mean, std }
}

// Identical floats can still leave ~1 ulp of spread after the mean; treat
// anything at rounding level as constant.
fn is_constant(s: &BlockStats) -> bool {
    s.std <= 1e-12 * s.mean.abs().max(1.0)
}

/// Next-day movement labels: `labels[i]` describes day `day + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub day: usize,
    pub labels: Vec<u8>,
}

/// Label 1 iff close(t + 1) > close(t); ties are 0.
pub fn make_labels(history: &MarketHistory, t: usize) -> Result<LabelMatrix> {
    if t + 1 >= history.n_days() {
        return Err(Error::range(
            "labels",
            format!("day {} beyond calendar of {} days", t + 1, history.n_days()),
        ));
    }
    let close = history.close_index()?;
    let labels = (0..history.n_tickers())
        .map(|i| {
            let s = history.series(i, close);
            u8::from(s[t + 1] > s[t])
        })
        .collect();
    Ok(LabelMatrix { day: t, labels })
}

/// Inclusive date range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(
                "split",
                format!("unknown split `{other}`"),
            )),
        }
    }
}

/// Chronological train / validation / test date ranges.
///
/// A sample built at day `t` is assigned by the date of its target day
/// `t + 1`, so every training label lies inside the training range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ] {
            if r.start > r.end {
                return Err(Error::validation(
                    "split",
                    format!("{name} starts after it ends"),
                ));
            }
        }
        if self.train.end >= self.validation.start || self.validation.end >= self.test.start {
            return Err(Error::validation(
                "split",
                "ranges must be ordered train < validation < test without overlap",
            ));
        }
        Ok(())
    }

    pub fn classify(&self, target: NaiveDate) -> Option<Split> {
        if self.train.contains(target) {
            Some(Split::Train)
        } else if self.validation.contains(target) {
            Some(Split::Validation)
        } else if self.test.contains(target) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn range(&self, split: Split) -> DateRange {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    /// Consecutive ranges covering `train`, `validation` and `test` target
    /// days, starting at the first day that has a full lookback window
    /// behind it.
    pub fn from_day_counts(
        calendar: &[NaiveDate],
        lookback: usize,
        train: usize,
        validation: usize,
        test: usize,
    ) -> Result<Self> {
        if train == 0 || validation == 0 || test == 0 {
            return Err(Error::validation(
                "split",
                "every split needs at least one day",
            ));
        }
        let first = lookback.max(1);
        let last = first + train + validation + test;
        if last > calendar.len() {
            return Err(Error::range(
                "split",
                format!("need {last} calendar days, have {}", calendar.len()),
            ));
        }
        let r = |a: usize, b: usize| DateRange::new(calendar[a], calendar[b - 1]);
        let spec = Self {
            train: r(first, first + train),
            validation: r(first + train, first + train + validation),
            test: r(first + train + validation, last),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// A planted lead-lag dependency: the follower's log return on day `d`
/// includes `coupling ×` the leader's log return on day `d − lag`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub leader: usize,
    pub follower: usize,
    pub lag: usize,
    pub coupling: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMarketSpec {
    pub n: usize,
    pub days: usize,
    pub edges: Vec<PlantedEdge>,
    /// Follower idiosyncratic noise, in units of `volatility`.
    pub noise_std: f64,
    /// Daily log-return standard deviation of the independent walks.
    pub volatility: f64,
    pub start: NaiveDate,
    pub seed: u64,
}

impl SyntheticMarketSpec {
    /// `edges` leaders `0..edges`, each driving follower `leader + ceil(n/2)`.
    pub fn lead_lag(
        n: usize,
        days: usize,
        edges: usize,
        lag: usize,
        coupling: f64,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let half = n.div_ceil(2);
        let edges = (0..edges.min(n / 2))
            .map(|i| PlantedEdge {
                leader: i,
                follower: half + i,
                lag,
                coupling,
            })
            .collect();
        Self {
            n,
            days,
            edges,
            noise_std,
            volatility: 0.02,
            start: NaiveDate::from_ymd_opt(2016, 5, 2).expect("valid date"),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::validation(
                "synthetic market",
                "need N >= 2 for a graph",
            ));
        }
        if self.days < 2 {
            return Err(Error::validation(
                "synthetic market",
                "need at least 2 days",
            ));
        }
        let (noise, vol) = (self.noise_std, self.volatility);
        if noise.is_nan() || noise < 0.0 || vol.is_nan() || vol <= 0.0 {
            return Err(Error::validation(
                "synthetic market",
                "noise must be >= 0 and volatility > 0",
            ));
        }
        for e in &self.edges {
            if e.leader >= self.n || e.follower >= self.n || e.leader == e.follower {
                return Err(Error::validation(
                    "planted edge",
                    format!("{e:?} invalid for N={}", self.n),
                ));
            }
            if !(1..=3).contains(&e.lag) {
                return Err(Error::validation(
                    "planted edge",
                    format!("lag {} not in 1..=3", e.lag),
                ));
            }
            if !(0.0..=1.0).contains(&e.coupling) {
                return Err(Error::validation(
                    "planted edge",
                    format!("coupling {} not in [0, 1]", e.coupling),
                ));
            }
        }
        Ok(())
    }
}

/// Output of [`synth_market`].
#[derive(Clone, Debug)]
pub struct SyntheticMarket {
    pub history: MarketHistory,
    /// `log_returns[i][d]` as generated (day 0 is 0).
    pub log_returns: Vec<Vec<f64>>,
}

/// Weekdays starting at `start` (rolled forward to a weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.checked_add_days(Days::new(1)).expect("calendar overflow");
    }
    out
}

/// Generates an OHLCV market where leaders are independent log-normal walks
/// and followers copy lagged leader returns plus Gaussian noise.
///
/// Open is the previous close, high/low bracket open and close by a
/// half-normal margin, and volume is log-normal. The output is a pure
/// function of `spec`.
pub fn synth_market(spec: &SyntheticMarketSpec) -> Result<SyntheticMarket> {
    spec.validate()?;
    let (n, days, vol) = (spec.n, spec.days, spec.volatility);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };

    let mut incoming: Vec<Vec<PlantedEdge>> = vec![Vec::new(); n];
    for e in &spec.edges {
        incoming[e.follower].push(*e);
    }

    let mut returns = vec![vec![0.0; days]; n];
    let mut shocks = vec![[0.0f64; 3]; n * days];
    let mut start_price = vec![0.0; n];
    for p in start_price.iter_mut() {
        *p = 50.0 * math::exp(0.5 * normal());
    }
    for d in 0..days {
        for i in 0..n {
            let eps = normal();
            shocks[i * days + d] = [normal(), normal(), normal()];
            if d == 0 {
                continue;
            }
            returns[i][d] = if incoming[i].is_empty() {
                vol * eps
            } else {
                let driven: f64 = incoming[i]
                    .iter()
                    .map(|e| {
                        if d >= e.lag {
                            e.coupling * returns[e.leader][d - e.lag]
                        } else {
                            0.0
                        }
                    })
                    .sum();
                driven + spec.noise_std * vol * eps
            };
        }
    }

    let calendar = business_days(spec.start, days);
    let width = OHLCV.len();
    let mut values = vec![0.0; n * width * days];
    for i in 0..n {
        let mut log_price = math::ln(start_price[i]);
        let mut prev_close = start_price[i];
        for d in 0..days {
            log_price += returns[i][d];
            let close = math::exp(log_price);
            let open = if d == 0 { close } else { prev_close };
            let [z_hi, z_lo, z_vol] = shocks[i * days + d];
            let high = open.max(close) * math::exp(0.5 * vol * z_hi.abs());
            let low = open.min(close) * math::exp(-0.5 * vol * z_lo.abs());
            let volume = math::exp(13.8 + 0.3 * z_vol);
            for (ind, v) in [open, high, low, close, volume].into_iter().enumerate() {
                values[(i * width + ind) * days + d] = v;
            }
            prev_close = close;
        }
    }

    let universe = StockUniverse {
        tickers: (0..n).map(|i| format!("S{i:03}")).collect(),
        indicator_names: OHLCV.iter().map(|s| s.to_string()).collect(),
        calendar,
    };
    Ok(SyntheticMarket {
        history: MarketHistory::new(universe, values)?,
        log_returns: returns,
    })
}

/// Realized correlation between a follower's returns and its leader's
/// lagged returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCheck {
    pub edge: PlantedEdge,
    pub realized_correlation: f64,
    pub detected: bool,
}

/// Checks each planted edge on the generated close series; an edge counts as
/// detected when the lagged return correlation exceeds `threshold`.
pub fn planted_edge_report(
    spec: &SyntheticMarketSpec,
    history: &MarketHistory,
    threshold: f64,
) -> Result<Vec<EdgeCheck>> {
    let close = history.close_index()?;
    let log_returns = |i: usize| -> Vec<f64> {
        let s = history.series(i, close);
        s.windows(2).map(|w| math::ln(w[1] / w[0])).collect()
    };
    spec.edges
        .iter()
        .map(|e| {
            let lead = log_returns(e.leader);
            let follow = log_returns(e.follower);
            let x = &lead[..lead.len().saturating_sub(e.lag)];
            let y = &follow[e.lag.min(follow.len())..];
            let rho = pearson(x, y);
            Ok(EdgeCheck {
                edge: *e,
                realized_correlation: rho,
                detected: rho > threshold,
            })
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let (x, y) = (&x[..n], &y[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / math::sqrt(sxx * syy)
    }
}
