use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How several observations falling in one cell are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Sum,
    Max,
}

/// What an unobserved cell receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillPolicy {
    /// Most recent earlier value of the same cell, else the sentinel.
    Forward,
    /// Zero.
    Zero,
}

/// Applied to observed values before filling; the sentinel is never transformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    None,
    Log1p,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Reduce { Mean => "mean", Sum => "sum", Max => "max" });
keyword_enum!(FillPolicy { Forward => "forward", Zero => "zero" });
keyword_enum!(Transform { None => "none", Log1p => "log1p" });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpec {
    pub name: String,
    /// Observation variable feeding this channel.
    pub variable: String,
    pub reduce: Reduce,
    pub fill: FillPolicy,
    pub transform: Transform,
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}",
            self.name, self.variable, self.reduce, self.fill, self.transform
        )
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;

    /// `name:variable:reduce:fill:transform`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [name, variable, reduce, fill, transform] = parts[..] else {
            return Err(Error::Config(format!(
                "channel `{s}` is not name:variable:reduce:fill:transform"
            )));
        };
        if name.is_empty() || variable.is_empty() {
            return Err(Error::Config(format!("channel `{s}` has an empty name")));
        }
        Ok(ChannelSpec {
            name: name.into(),
            variable: variable.into(),
            reduce: reduce.parse()?,
            fill: fill.parse()?,
            transform: transform.parse()?,
        })
    }
}

/// Ordered channel axis of the input volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelRegistry {
    channels: Vec<ChannelSpec>,
}

impl Default for ChannelRegistry {
    /// Nine channels: two smoke forecasts, AOD, surface and 250 hPa wind
    /// components, fire radiative power and the plume flag.
    fn default() -> Self {
        let ch = |name: &str, reduce, transform| ChannelSpec {
            name: name.into(),
            variable: name.into(),
            reduce,
            fill: FillPolicy::Forward,
            transform,
        };
        ChannelRegistry {
            channels: vec![
                ch("firework_pm25", Reduce::Mean, Transform::Log1p),
                ch("bluesky_pm25", Reduce::Mean, Transform::Log1p),
                ch("aod", Reduce::Mean, Transform::None),
                ch("wind_u_50m", Reduce::Mean, Transform::None),
                ch("wind_v_50m", Reduce::Mean, Transform::None),
                ch("wind_u_250hpa", Reduce::Mean, Transform::None),
                ch("wind_v_250hpa", Reduce::Mean, Transform::None),
                ch("frp", Reduce::Sum, Transform::Log1p),
                ch("hms_plume", Reduce::Max, Transform::None),
            ],
        }
    }
}

impl ChannelRegistry {
    pub fn new(channels: Vec<ChannelSpec>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Config("channel registry is empty".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate channel `{}`", c.name)));
            }
        }
        Ok(ChannelRegistry { channels })
    }

    /// Comma-separated list of `name:variable:reduce:fill:transform` entries.
    pub fn parse(s: &str) -> Result<Self> {
        Self::new(s.split(',').map(str::parse).collect::<Result<_>>()?)
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn has_variable(&self, variable: &str) -> bool {
        self.channels.iter().any(|c| c.variable == variable)
    }
}

impl fmt::Display for ChannelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.channels.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_nine_unique_channels() {
        let reg = ChannelRegistry::default();
        assert_eq!(reg.len(), 9);
        assert_eq!(reg.index_of("hms_plume"), Some(8));
        assert_eq!(ChannelRegistry::parse(&reg.to_string()).unwrap(), reg);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(ChannelRegistry::parse("a:a:mean:forward:none,a:b:sum:zero:none").is_err());
        assert!(ChannelRegistry::parse("a:a:median:forward:none").is_err());
        assert!(ChannelRegistry::parse("a:a:mean").is_err());
        assert!(ChannelRegistry::parse("").is_err());
    }
}
