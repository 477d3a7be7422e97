//! CSV ingestion and the canonical writer.
//!
//! Records: `user_id,timestamp,location_id,trip_flag` with flags `S`, `E`
//! or `-`. Locations: `location_id,lon,lat`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::projection::{centroid, GeoPoint, LocalProjection};
use crate::records::{
    Dataset, DatasetTag, EventRecord, LocationTable, TimeWindow, Trajectory, TripFlag,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub kept: usize,
    pub dropped_outside_window: usize,
    pub dropped_duplicates: usize,
    pub users: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn column(headers: &csv::StringRecord, name: &str, source_name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
        source_name: source_name.into(),
        line: 1,
        msg: format!("missing column `{name}`"),
    })
}

/// Reads a locations CSV into raw geographic coordinates.
pub fn read_locations<R: Read>(r: R, source_name: &str) -> Result<Vec<(String, GeoPoint)>> {
    let mut rdr = csv_reader(r);
    let headers = rdr.headers()?.clone();
    let (ci, cx, cy) = (
        column(&headers, "location_id", source_name)?,
        column(&headers, "lon", source_name)?,
        column(&headers, "lat", source_name)?,
    );
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |msg: String| Error::Parse {
            source_name: source_name.into(),
            line,
            msg,
        };
        let num = |i: usize, what: &str| -> Result<f64> {
            row.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| err(format!("bad {what}: {e}")))
        };
        let g = GeoPoint::new(num(cx, "lon")?, num(cy, "lat")?);
        g.validate().map_err(|e| err(e.to_string()))?;
        out.push((row.get(ci).unwrap_or("").to_string(), g));
    }
    Ok(out)
}

pub fn read_locations_file(path: &Path) -> Result<Vec<(String, GeoPoint)>> {
    read_locations(open(path)?, &path.display().to_string())
}

/// Projects raw locations into a table.
pub fn project_locations(
    raw: &[(String, GeoPoint)],
    tag: DatasetTag,
    projection: &LocalProjection,
) -> Result<LocationTable> {
    let entries = raw
        .iter()
        .map(|(id, g)| Ok((id.clone(), projection.project(*g)?)))
        .collect::<Result<Vec<_>>>()?;
    LocationTable::new(tag, entries)
}

/// Projection centred on the joint centroid of both location sets.
pub fn joint_projection(a: &[(String, GeoPoint)], b: &[(String, GeoPoint)]) -> Result<LocalProjection> {
    let origin = centroid(a.iter().chain(b).map(|(_, g)| g))
        .ok_or_else(|| Error::Config("no locations to centre the projection on".into()))?;
    LocalProjection::new(origin)
}

/// Parses a records CSV against an already-built location table.
///
/// Transport rows must carry `S` or `E`. Phone rows are always stored with
/// `TripFlag::None`, whatever their flag column says.
pub fn read_records<R: Read>(
    r: R,
    source_name: &str,
    tag: DatasetTag,
    locations: &LocationTable,
    window: TimeWindow,
) -> Result<(Vec<Trajectory>, IngestReport)> {
    let mut rdr = csv_reader(r);
    let headers = rdr.headers()?.clone();
    let cu = column(&headers, "user_id", source_name)?;
    let ct = column(&headers, "timestamp", source_name)?;
    let cl = column(&headers, "location_id", source_name)?;
    let cf = column(&headers, "trip_flag", source_name)?;

    let mut report = IngestReport::default();
    let mut users: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        report.rows += 1;
        let field = |i: usize| row.get(i).unwrap_or("");
        let timestamp: i64 = field(ct).parse().map_err(|e| Error::Parse {
            source_name: source_name.into(),
            line,
            msg: format!("bad timestamp `{}`: {e}", field(ct)),
        })?;
        let loc_id = field(cl);
        let location = locations.lookup(loc_id).ok_or_else(|| Error::UnknownLocation {
            source_name: source_name.into(),
            line,
            id: loc_id.into(),
        })?;
        let flag = TripFlag::parse(field(cf)).ok_or_else(|| Error::Parse {
            source_name: source_name.into(),
            line,
            msg: format!("bad trip flag `{}`", field(cf)),
        })?;
        let flag = match tag {
            DatasetTag::Transport if flag == TripFlag::None => {
                return Err(Error::MissingTripFlag {
                    source_name: source_name.into(),
                    line,
                })
            }
            DatasetTag::Transport => flag,
            DatasetTag::Communication => TripFlag::None,
        };
        let user = field(cu);
        if user.is_empty() {
            return Err(Error::Parse {
                source_name: source_name.into(),
                line,
                msg: "empty user_id".into(),
            });
        }
        if !window.contains(timestamp) {
            report.dropped_outside_window += 1;
            continue;
        }
        users
            .entry(user.to_string())
            .or_default()
            .push(EventRecord::new(timestamp, location, flag));
    }

    let mut trajectories = Vec::with_capacity(users.len());
    for (user_id, records) in users {
        let mut t = Trajectory::new(user_id, records);
        let before = t.records.len();
        t.records.dedup();
        let dups = before - t.records.len();
        if dups > 0 {
            warn!("{source_name}: dropped {dups} duplicate rows of user `{}`", t.user_id);
            report.dropped_duplicates += dups;
        }
        report.kept += t.records.len();
        trajectories.push(t);
    }
    report.users = trajectories.len();
    Ok((trajectories, report))
}

/// Loads one dataset, projecting its locations with `projection`.
pub fn ingest(
    records_path: &Path,
    locations_path: &Path,
    tag: DatasetTag,
    window: TimeWindow,
    projection: &LocalProjection,
) -> Result<(Dataset, IngestReport)> {
    let raw = read_locations_file(locations_path)?;
    let locations = project_locations(&raw, tag, projection)?;
    let (trajectories, report) = read_records(
        open(records_path)?,
        &records_path.display().to_string(),
        tag,
        &locations,
        window,
    )?;
    Ok((
        Dataset {
            tag,
            trajectories,
            locations,
        },
        report,
    ))
}

/// Input files of one dataset.
#[derive(Debug, Clone, Copy)]
pub struct DatasetFiles<'a> {
    pub records: &'a Path,
    pub locations: &'a Path,
}

/// Both datasets, projected around the joint centroid of all locations.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub transport: Dataset,
    pub comm: Dataset,
    pub transport_report: IngestReport,
    pub comm_report: IngestReport,
    pub projection: LocalProjection,
}

pub fn ingest_pair(
    transport: DatasetFiles<'_>,
    comm: DatasetFiles<'_>,
    window: TimeWindow,
) -> Result<LoadedPair> {
    let raw_t = read_locations_file(transport.locations)?;
    let raw_c = read_locations_file(comm.locations)?;
    let projection = joint_projection(&raw_t, &raw_c)?;
    let stops = project_locations(&raw_t, DatasetTag::Transport, &projection)?;
    let antennas = project_locations(&raw_c, DatasetTag::Communication, &projection)?;
    let (tt, transport_report) = read_records(
        open(transport.records)?,
        &transport.records.display().to_string(),
        DatasetTag::Transport,
        &stops,
        window,
    )?;
    let (ct, comm_report) = read_records(
        open(comm.records)?,
        &comm.records.display().to_string(),
        DatasetTag::Communication,
        &antennas,
        window,
    )?;
    Ok(LoadedPair {
        transport: Dataset {
            tag: DatasetTag::Transport,
            trajectories: tt,
            locations: stops,
        },
        comm: Dataset {
            tag: DatasetTag::Communication,
            trajectories: ct,
            locations: antennas,
        },
        transport_report,
        comm_report,
        projection,
    })
}

/// Canonical records writer: header, users in order, records in canonical
/// order.
pub fn write_records<W: Write>(dataset: &Dataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["user_id", "timestamp", "location_id", "trip_flag"])?;
    for t in &dataset.trajectories {
        for r in &t.records {
            wtr.write_record([
                t.user_id.as_str(),
                &r.timestamp.to_string(),
                dataset.locations.id(r.location),
                r.flag.symbol(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("records", e))?;
    Ok(())
}

pub fn write_locations<W: Write>(table: &LocationTable, projection: &LocalProjection, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["location_id", "lon", "lat"])?;
    for (_, id, p) in table.iter() {
        let g = projection.unproject(p);
        wtr.write_record([id, &format!("{:.8}", g.lon), &format!("{:.8}", g.lat)])?;
    }
    wtr.flush().map_err(|e| Error::io("locations", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::records::LocationIdx;
    use proptest::prelude::*;

    fn stops() -> LocationTable {
        LocationTable::new(
            DatasetTag::Transport,
            vec![("s1".into(), Point::new(0.0, 0.0)), ("s2".into(), Point::new(100.0, 0.0))],
        )
        .unwrap()
    }

    const HEADER: &str = "user_id,timestamp,location_id,trip_flag\n";

    #[test]
    fn three_valid_rows_make_one_trajectory() {
        let csv = format!("{HEADER}a,30,s1,S\na,10,s2,E\na,20,s1,S\n");
        let (trajs, rep) =
            read_records(csv.as_bytes(), "t.csv", DatasetTag::Transport, &stops(), TimeWindow::unbounded())
                .unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].activity(), 3);
        assert_eq!(trajs[0].records[0].timestamp, 10);
        assert_eq!(rep.kept, 3);
    }

    #[test]
    fn unknown_location_names_the_row() {
        let csv = format!("{HEADER}a,30,s1,S\na,40,nowhere,E\n");
        let err = read_records(csv.as_bytes(), "t.csv", DatasetTag::Transport, &stops(), TimeWindow::unbounded())
            .unwrap_err();
        match err {
            Error::UnknownLocation { line, id, .. } => {
                assert_eq!(line, 3);
                assert_eq!(id, "nowhere");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn window_filter_drops_and_counts() {
        let csv = format!("{HEADER}A,100,s1,S\nA,5000,s1,E\nB,200,s2,S\n");
        let (trajs, rep) =
            read_records(csv.as_bytes(), "t.csv", DatasetTag::Transport, &stops(), TimeWindow::new(0, 1000))
                .unwrap();
        let acts: Vec<_> = trajs.iter().map(|t| (t.user_id.as_str(), t.activity())).collect();
        assert_eq!(acts, vec![("A", 1), ("B", 1)]);
        assert_eq!(rep.dropped_outside_window, 1);
    }

    #[test]
    fn transport_rows_need_a_flag_and_phone_flags_are_ignored() {
        let csv = format!("{HEADER}a,30,s1,-\n");
        let err = read_records(csv.as_bytes(), "t.csv", DatasetTag::Transport, &stops(), TimeWindow::unbounded())
            .unwrap_err();
        assert!(matches!(err, Error::MissingTripFlag { line: 2, .. }));

        let csv = format!("{HEADER}a,30,s1,S\n");
        let (trajs, _) =
            read_records(csv.as_bytes(), "c.csv", DatasetTag::Communication, &stops(), TimeWindow::unbounded())
                .unwrap();
        assert_eq!(trajs[0].records[0].flag, TripFlag::None);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let csv = format!("{HEADER}a,30,s1,S\na,notanumber,s1,E\n");
        let err = read_records(csv.as_bytes(), "t.csv", DatasetTag::Transport, &stops(), TimeWindow::unbounded())
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(read_records("user,ts\n".as_bytes(), "x", DatasetTag::Transport, &stops(), TimeWindow::unbounded()).is_err());
    }

    #[test]
    fn exact_duplicates_are_dropped_but_same_place_taps_kept() {
        let csv = format!("{HEADER}a,30,s1,S\na,30,s1,S\na,30,s1,E\n");
        let (trajs, rep) =
            read_records(csv.as_bytes(), "t.csv", DatasetTag::Transport, &stops(), TimeWindow::unbounded())
                .unwrap();
        assert_eq!(trajs[0].activity(), 2);
        assert_eq!(rep.dropped_duplicates, 1);
    }

    #[test]
    fn locations_parse_and_validate() {
        let ok = "location_id,lon,lat\nx,103.8,1.35\n";
        assert_eq!(read_locations(ok.as_bytes(), "l").unwrap().len(), 1);
        let bad = "location_id,lon,lat\nx,203.8,1.35\n";
        assert!(read_locations(bad.as_bytes(), "l").is_err());
    }

    proptest! {
        #[test]
        fn canonical_writer_roundtrips(rows in proptest::collection::vec((0u8..5, 0i64..10_000, 0u32..2, any::<bool>()), 0..60)) {
            let table = stops();
            let mut per_user: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
            for (u, t, l, s) in rows {
                let flag = if s { TripFlag::Start } else { TripFlag::End };
                per_user.entry(format!("u{u}")).or_default().push(EventRecord::new(t, LocationIdx(l), flag));
            }
            let trajectories: Vec<Trajectory> = per_user
                .into_iter()
                .map(|(u, r)| {
                    let mut t = Trajectory::new(u, r);
                    t.records.dedup();
                    t
                })
                .collect();
            let ds = Dataset { tag: DatasetTag::Transport, trajectories, locations: table.clone() };
            let mut buf = Vec::new();
            write_records(&ds, &mut buf).unwrap();
            let (back, _) = read_records(buf.as_slice(), "rt", DatasetTag::Transport, &table, TimeWindow::unbounded()).unwrap();
            prop_assert_eq!(back, ds.trajectories);
        }
    }
}
