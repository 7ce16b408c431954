//! MovieLens-1M ingestion.
//!
//! Three "::"-separated files are joined into one labeled sample per
//! rating row (label 1 iff rating >= 4). The movie is the ad: its
//! attributes are the release year (parsed from the trailing "(YYYY)" of
//! the title), the title tokens, and the genres. User id, gender, age
//! and occupation are the other features. Files are decoded as Latin-1.

use std::collections::HashMap;
use std::path::Path;

use super::dataset::{Dataset, Sample};
use super::schema::{FieldArity, FieldRole, FieldSchema};
use crate::error::{CoreError, Result};

/// The 8-field MovieLens schema: 1 ad-identity, 3 ad-attribute, 4 other.
pub fn ml1m_schema() -> FieldSchema {
    FieldSchema::new(vec![
        FieldSchema::field("movie_id", FieldRole::AdId, FieldArity::Single),
        FieldSchema::field("year", FieldRole::AdAttribute, FieldArity::Single),
        FieldSchema::field("title", FieldRole::AdAttribute, FieldArity::Multi),
        FieldSchema::field("genres", FieldRole::AdAttribute, FieldArity::Multi),
        FieldSchema::field("user_id", FieldRole::Other, FieldArity::Single),
        FieldSchema::field("gender", FieldRole::Other, FieldArity::Single),
        FieldSchema::field("age", FieldRole::Other, FieldArity::Single),
        FieldSchema::field("occupation", FieldRole::Other, FieldArity::Single),
    ])
    .expect("static schema is valid")
}

pub struct LoadReport {
    pub dataset: Dataset,
    pub skipped_rows: usize,
}

struct Movie {
    year: Vec<String>,
    title_tokens: Vec<String>,
    genres: Vec<String>,
}

/// Loads the three ML-1M files into one dataset, one sample per rating
/// row in file order. Malformed rows are skipped and counted; unreadable
/// files are fatal.
pub fn load_movielens(
    ratings_path: &Path,
    movies_path: &Path,
    users_path: &Path,
) -> Result<LoadReport> {
    let mut skipped = 0usize;

    let mut movies: HashMap<String, Movie> = HashMap::new();
    for line in read_latin1_lines(movies_path)? {
        let parts: Vec<&str> = line.splitn(3, "::").collect();
        if parts.len() != 3 {
            skipped += 1;
            continue;
        }
        let (year, title_tokens) = parse_title(parts[1]);
        let genres = parts[2].split('|').filter(|g| !g.is_empty()).map(str::to_string).collect();
        movies.insert(parts[0].to_string(), Movie { year, title_tokens, genres });
    }

    let mut users: HashMap<String, [String; 3]> = HashMap::new();
    for line in read_latin1_lines(users_path)? {
        let parts: Vec<&str> = line.split("::").collect();
        if parts.len() < 4 {
            skipped += 1;
            continue;
        }
        users.insert(
            parts[0].to_string(),
            [parts[1].to_string(), parts[2].to_string(), parts[3].to_string()],
        );
    }

    let mut samples = Vec::new();
    for line in read_latin1_lines(ratings_path)? {
        let parts: Vec<&str> = line.split("::").collect();
        if parts.len() != 4 {
            skipped += 1;
            continue;
        }
        let (user_id, movie_id, rating) = (parts[0], parts[1], parts[2]);
        let (Some(movie), Some(user)) = (movies.get(movie_id), users.get(user_id)) else {
            skipped += 1;
            continue;
        };
        let Ok(rating) = rating.parse::<u32>() else {
            skipped += 1;
            continue;
        };
        samples.push(Sample {
            label: rating >= 4,
            fields: vec![
                vec![movie_id.to_string()],
                movie.year.clone(),
                movie.title_tokens.clone(),
                movie.genres.clone(),
                vec![user_id.to_string()],
                vec![user[0].clone()],
                vec![user[1].clone()],
                vec![user[2].clone()],
            ],
        });
    }

    let (dataset, _) = Dataset::from_samples(ml1m_schema(), samples)?;
    Ok(LoadReport { dataset, skipped_rows: skipped })
}

/// Splits "Toy Story (1995)" into year "1995" and lowercase title tokens
/// {"toy", "story"}: the year suffix is removed, punctuation is stripped,
/// and the remainder splits on whitespace.
fn parse_title(title: &str) -> (Vec<String>, Vec<String>) {
    let title = title.trim();
    let mut year = Vec::new();
    let mut body = title;
    if title.ends_with(')') {
        if let Some(open) = title.rfind('(') {
            let inner = &title[open + 1..title.len() - 1];
            if inner.len() == 4 && inner.chars().all(|c| c.is_ascii_digit()) {
                year.push(inner.to_string());
                body = title[..open].trim_end();
            }
        }
    }
    let tokens = body
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect();
    (year, tokens)
}

fn read_latin1_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| {
        CoreError::Config(format!("cannot read {}: {e}", path.display()))
    })?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn title_parsing_extracts_year_and_tokens() {
        let (year, tokens) = parse_title("Toy Story (1995)");
        assert_eq!(year, vec!["1995".to_string()]);
        assert_eq!(tokens, vec!["toy".to_string(), "story".to_string()]);
    }

    #[test]
    fn title_without_year_keeps_all_tokens() {
        let (year, tokens) = parse_title("Some Film");
        assert!(year.is_empty());
        assert_eq!(tokens, vec!["some".to_string(), "film".to_string()]);
    }

    #[test]
    fn punctuation_is_stripped() {
        let (_, tokens) = parse_title("Miller's Crossing (1990)");
        assert_eq!(
            tokens,
            vec!["miller".to_string(), "s".to_string(), "crossing".to_string()]
        );
    }

    #[test]
    fn loads_a_tiny_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let movies = dir.path().join("movies.dat");
        let users = dir.path().join("users.dat");
        let ratings = dir.path().join("ratings.dat");
        std::fs::write(&movies, "1::Toy Story (1995)::Animation|Comedy\n2::Jumanji (1995)::Adventure\n").unwrap();
        std::fs::write(&users, "1::F::1::10::48067\n2::M::56::16::70072\n").unwrap();
        std::fs::write(
            &ratings,
            "1::1::5::978300760\n1::2::3::978302109\n2::1::4::978301968\nbadrow\n1::99::5::0\n",
        )
        .unwrap();
        let report = load_movielens(&ratings, &movies, &users).unwrap();
        // rating 5 -> label 1, rating 3 -> label 0, rating 4 -> label 1
        assert_eq!(report.dataset.len(), 3);
        assert_eq!(report.skipped_rows, 2); // "badrow" and unknown movie 99
        let labels: Vec<bool> = report.dataset.rows().iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![true, false, true]);
        assert_eq!(report.dataset.schema().len(), 8);
    }
}
