//! Country → region table used for the music continent proxy.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Europe,
    NorthAmerica,
    SouthAmerica,
    UnitedKingdom,
    Other,
}

impl Region {
    /// The four regions kept by music preprocessing.
    pub const RETAINED: [Region; 4] = [
        Region::Europe,
        Region::NorthAmerica,
        Region::SouthAmerica,
        Region::UnitedKingdom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Europe => "Europe",
            Region::NorthAmerica => "North America",
            Region::SouthAmerica => "South America",
            Region::UnitedKingdom => "United Kingdom",
            Region::Other => "Other",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// United Kingdom is its own region and is never counted as Europe.
const EUROPE: &[&str] = &[
    "Aland Islands",
    "Albania",
    "Andorra",
    "Austria",
    "Belarus",
    "Belgium",
    "Bosnia and Herzegovina",
    "Bulgaria",
    "Croatia",
    "Cyprus",
    "Czech Republic",
    "Czechia",
    "Denmark",
    "Estonia",
    "Faroe Islands",
    "Finland",
    "France",
    "Germany",
    "Gibraltar",
    "Greece",
    "Guernsey",
    "Holy See (Vatican City State)",
    "Hungary",
    "Iceland",
    "Ireland",
    "Isle of Man",
    "Italy",
    "Jersey",
    "Kosovo",
    "Latvia",
    "Liechtenstein",
    "Lithuania",
    "Luxembourg",
    "Macedonia",
    "Malta",
    "Moldova",
    "Monaco",
    "Montenegro",
    "Netherlands",
    "North Macedonia",
    "Norway",
    "Poland",
    "Portugal",
    "Romania",
    "Russia",
    "Russian Federation",
    "San Marino",
    "Serbia",
    "Serbia and Montenegro",
    "Slovakia",
    "Slovenia",
    "Spain",
    "Svalbard and Jan Mayen",
    "Sweden",
    "Switzerland",
    "Ukraine",
];

const NORTH_AMERICA: &[&str] = &[
    "Antigua and Barbuda",
    "Bahamas",
    "Barbados",
    "Belize",
    "Bermuda",
    "Canada",
    "Cayman Islands",
    "Costa Rica",
    "Cuba",
    "Dominica",
    "Dominican Republic",
    "El Salvador",
    "Greenland",
    "Grenada",
    "Guatemala",
    "Haiti",
    "Honduras",
    "Jamaica",
    "Mexico",
    "Nicaragua",
    "Panama",
    "Puerto Rico",
    "Saint Kitts and Nevis",
    "Saint Lucia",
    "Saint Vincent and the Grenadines",
    "Trinidad and Tobago",
    "United States",
    "United States Minor Outlying Islands",
    "Virgin Islands, British",
    "Virgin Islands, U.S.",
];

const SOUTH_AMERICA: &[&str] = &[
    "Argentina",
    "Bolivia",
    "Brazil",
    "Chile",
    "Colombia",
    "Ecuador",
    "Falkland Islands (Malvinas)",
    "French Guiana",
    "Guyana",
    "Paraguay",
    "Peru",
    "Suriname",
    "Uruguay",
    "Venezuela",
];

/// Maps a country name to its region. Unknown countries map to
/// [`Region::Other`].
pub fn derive_region(country: &str) -> Region {
    let country = country.trim();
    if country == "United Kingdom" {
        Region::UnitedKingdom
    } else if EUROPE.contains(&country) {
        Region::Europe
    } else if NORTH_AMERICA.contains(&country) {
        Region::NorthAmerica
    } else if SOUTH_AMERICA.contains(&country) {
        Region::SouthAmerica
    } else {
        Region::Other
    }
}
