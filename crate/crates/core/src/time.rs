//! Virtual-clock helpers. Times are seconds since the simulation origin.

pub const SECONDS_PER_DAY: u64 = 86_400;

pub fn epoch_of(now_sec: u64, epoch_duration_sec: u64) -> u64 {
    now_sec / epoch_duration_sec
}

pub fn day_of(now_sec: u64) -> u32 {
    (now_sec / SECONDS_PER_DAY) as u32
}

pub fn epoch_start(epoch: u64, epoch_duration_sec: u64) -> u64 {
    epoch * epoch_duration_sec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_boundaries() {
        assert_eq!(epoch_of(0, 900), 0);
        assert_eq!(epoch_of(899, 900), 0);
        assert_eq!(epoch_of(900, 900), 1);
        assert_eq!(day_of(86_399), 0);
        assert_eq!(day_of(86_400), 1);
    }
}
