"""Built-in aspect vocabularies.

Value ids are indices into these lists. Within one schema the lists are
pairwise disjoint so that a value name identifies its aspect unambiguously;
the toy similarity backend relies on that.
"""

from __future__ import annotations

DEFAULT_ASPECTS = (
    "Content",
    "Style",
    "Background",
    "Size",
    "Color",
    "Perspective",
    "Other",
)

DEFAULT_VALUES: dict[str, tuple[str, ...]] = {
    "Content": (
        "parrot", "cat", "dog", "temple", "teapot", "girl", "tree", "mountain",
        "boat", "robot", "flower", "dragon", "castle", "owl", "fish", "car",
    ),
    "Style": (
        "realistic", "cartoon", "watercolor", "oil-painting", "sketch", "anime",
        "pixel-art", "abstract", "vintage", "minimalist", "baroque",
        "impressionist", "cyberpunk", "gothic", "pastel", "woodblock",
    ),
    "Background": (
        "forest", "beach", "cityscape", "meadow", "desert", "indoor", "space",
        "garden", "street", "ocean", "clouds", "field", "library", "market",
        "snowfield", "cave",
    ),
    "Size": (
        "tiny", "small", "medium", "large", "huge", "giant", "miniature",
        "towering", "petite", "grand", "colossal", "compact", "sprawling",
        "modest", "immense", "pocket-sized",
    ),
    "Color": (
        "red", "blue", "green", "yellow", "purple", "orange", "teal", "pink",
        "brown", "black", "white", "gray", "gold", "silver", "crimson", "navy",
    ),
    "Perspective": (
        "front-view", "side-view", "top-down", "low-angle", "high-angle",
        "wide-shot", "close-up", "aerial", "profile", "three-quarter", "macro",
        "panoramic", "first-person", "overhead", "diagonal", "rear-view",
    ),
    "Other": (
        "plain", "bokeh", "film-grain", "vignette", "hdr", "soft-light",
        "hard-light", "mist", "rain", "glow", "reflections", "long-shadows",
        "sparkle", "motion-blur", "sepia", "neon",
    ),
}

FASHION_ASPECTS = (
    "Appearance",
    "Function",
    "Material",
    "Style",
    "Details",
    "Occasion",
    "Other",
)

FASHION_VALUES: dict[str, tuple[str, ...]] = {
    "Appearance": (
        "fitted", "flowing", "structured", "oversized", "cropped", "layered",
        "asymmetric", "tailored", "draped", "boxy", "slim", "voluminous",
        "wrap-around", "high-waisted", "pleated", "ruched",
    ),
    "Function": (
        "everyday", "athletic", "outerwear", "loungewear", "workwear",
        "rainproof", "thermal", "breathable", "travel", "sleepwear",
        "swimwear", "maternity", "protective", "uniform", "ceremonial",
        "convertible",
    ),
    "Material": (
        "cotton", "silk", "denim", "leather", "wool", "linen", "satin",
        "velvet", "tweed", "chiffon", "suede", "cashmere", "polyester",
        "lace", "corduroy", "jersey",
    ),
    "Style": (
        "casual", "formal", "bohemian", "minimal", "streetwear", "preppy",
        "romantic", "grunge", "classic", "avant-garde", "sporty", "retro",
        "military", "nautical", "western", "punk",
    ),
    "Details": (
        "buttons", "zippers", "embroidery", "fringe", "sequins", "pockets",
        "ruffles", "belted", "collared", "hooded", "cuffed", "quilted",
        "studded", "piped", "toggles", "drawstring",
    ),
    "Occasion": (
        "office", "wedding", "beach-day", "evening", "festival", "brunch",
        "hiking", "gala", "commute", "picnic", "club", "interview",
        "vacation", "graduation", "date-night", "weekend",
    ),
    "Other": (
        "monochrome", "patterned", "color-blocked", "floral", "striped",
        "plaid", "polka-dot", "tie-dye", "metallic", "matte", "glossy",
        "two-tone", "ombre", "houndstooth", "herringbone", "paisley",
    ),
}
