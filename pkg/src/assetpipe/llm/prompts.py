"""Prompt template registry.

Bodies use ``{name}`` placeholders. Substitution is a single pass, so braces
inside bound values are inserted verbatim and never re-expanded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


class UnknownTemplateError(KeyError):
    pass


class MissingBindingError(ValueError):
    def __init__(self, template_id: str, name: str):
        self.template_id = template_id
        self.name = name
        super().__init__(f"template {template_id!r} needs binding {name!r}")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str

    @property
    def required_bindings(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.body)) - {"dynamic_blocks"}


_FORMAT = (
    "If yes, please specify them in the following format:\n"
    "physical assets: [ ]\nlocations: [ ]\nownerships: [ ]\ncommodities: []\n"
)
_REL_PLURAL = (
    "Additionally, identify the relationships between them, specifying the location of each physical asset, their ownership details, and commodities. "
    "Format the relationships as follows:\nrelationships: [asset: '', location: '', ownership: '', commodities: '']"
)
_ROLE = (
    "You are a virtual assistant with advanced expertise in a broad spectrum of topics, equipped to utilize high-level critical thinking, cognitive skills, creativity, and innovation.\n"
    "Your goal is to deliver the most straightforward and accurate answer possible for each question, ensuring high-quality and useful responses for the user.\n"
)
_DEFINITIONS = (
    "A physical asset is a tangible resource that a company owns and uses in the production of goods and services. Examples of physical assets are facilities, equipment, infrastructure, etc. Ensure that a geographical location or region is never considered as an asset.\n"
    "A financial asset or other non-physical asset should never be included as a physical asset. Examples of financial assets include equity commitments, corporate facilities, accounts receivable, and short-term investments. Never include these in the list of physical assets.\n"
    "A commodity is what the physical asset is being used for. Examples include copper, gold, electricity, renewable energy, etc."
)
_MUST_FORMAT = (
    "If yes, you must specify them in the following format:\n"
    "physical assets: [ ]\nlocations: [ ]\nownerships: [ ]\ncommodities: []\n"
)
_REL_SINGULAR_STRICT = (
    "Additionally, identify the relationships between them, specifying the location of each physical asset, the ownership details, and the commodity the physical asset is used for."
    "Format the relationships as follows:\nrelationships: [asset: '', location: '', ownership: '', commodity: '']. Do not output anything else."
)
_QUERY_IRZ = (
    "Now, let's analyze the following text:\n"
    "Text: {chunk}\nQuery: Let's think step-by-step. Does this text mention any physical assets, locations or ownerships? Does the text mention what commodity the physical asset is being used for?\n"
)
_EXAMPLE_1 = (
    "Example:\n"
    "Text: [...] Our principal asset is the Grasberg mine, which we discovered in 1988. Grasberg contains the largest single gold reserve and one of the largest copper reserves of any mine in the world. Our principal operating subsidiary is PT Freeport Indonesia, a limited liability company organized under the laws of the Republic of Indonesia and incorporated in Delaware. [...]"
    "Query: Does this text mention any physical assets, locations, and ownerships?\n"
    "physical assets: [Grasberg mine]\nlocations: [Sudirman Mountain Range, Papua, Indonesia]\nownerships: [Republic of Indonesia, Delaware]\n[commodities: copper, gold]\n"
    "relationships: [asset: 'Grasberg mine', location: 'Indonesia', ownership: 'PT Freeport Indonesia', commodities: 'copper', 'gold']\n\n"
)
_BASE_QUERY = "Text: {chunk}\nQuery: Does this text mention any physical assets, locations, ownerships, and commodities? "

#: Model response embedded in the one-shot prompt; a known-good parser input.
ONE_SHOT_EXEMPLAR_RESPONSE = (
    "physical assets: [Grasberg mine]\nlocations: [Sudirman Mountain Range, Papua, Indonesia]\nownerships: [Republic of Indonesia, Delaware]\n[commodities: copper, gold]\n"
    "relationships: [asset: 'Grasberg mine', location: 'Indonesia', ownership: 'PT Freeport Indonesia', commodities: 'copper', 'gold']"
)

_GK_HEAD = "{generated_knowledge}\n\n"

_DYNAMIC_ASSETS = (
    "A physical asset is a tangible resource that a company owns and uses in the production of goods and services. Examples of physical assets are facilities, equipment, infrastructure, etc.\n"
    "Ensure that a geographical location or region is never considered as an asset.\n"
    "A financial asset or other non-physical asset should never be included as a physical asset. Examples of financial assets include equity commitments, corporate facilities, accounts receivable, and short-term investments. Never include these in the list of physical assets.\n"
)
_DYNAMIC_COMMODITIES = (
    "A commodity is what the physical asset is being used for. Examples include copper, gold, electricity, renewable energy, etc.\n"
)
_DYNAMIC_LOCATIONS = (
    "Always ensure that a geographical location or region is mentioned separately from the physical asset.\n"
)
DYNAMIC_FLAGS = {
    "contains_assets": _DYNAMIC_ASSETS,
    "contains_commodities": _DYNAMIC_COMMODITIES,
    "contains_locations": _DYNAMIC_LOCATIONS,
}

_BODIES = {
    "zero_shot": _BASE_QUERY + _FORMAT + _REL_PLURAL,
    "one_shot": _BASE_QUERY + _FORMAT + _REL_PLURAL + "Here is an example:\n" + _EXAMPLE_1,
    "few_shot": (
        _BASE_QUERY + _FORMAT + _REL_PLURAL + "Here are some examples:\n" + _EXAMPLE_1
        + "Example 2:\n"
        "Text: [...] PT Freeport Indonesia mines, processes and explores for ore containing copper, gold and silver. It operates in the remote highlands of the Sudirman Mountain Range in the province of Papua (formerly Irian Jaya), Indonesia, which is on the western half of the island of New Guinea. [...]"
        "Query: Does this text mention any physical assets, locations, and ownerships?\n"
        "physical assets: [PT Freeport Indonesia Mines]\nlocations: [Sudirman Mountain Range, Papua, Indonesia, New Guinea]\nownerships: [PT Freeport Indonesia]\ncommodities: [copper, gold, silver]\n"
        "relationships: \n"
        "[asset: 'PT Freeport Indonesia Mines', location: 'Sudirman Mountain Range, Papua, Indonesia, New Guinea', ownership: 'PT Freeport Indonesia', commodities: 'copper, gold, silver']\n"
        "Example 3:\n"
        "Text: [...] The Republic of Indonesia consists of more than 17,000 islands stretching 3,000 miles along the equator from Malaysia to Australia and is the fourth most populous nation in the world with over 200 million people. [...]"
        "Query: Does this text mention any physical assets, locations, and ownerships?\n"
        "physical assets: []\nlocations: [Republic of Indonesia, Malaysia, Australia]\nownerships: []\ncommodities: []\n\n"
        "relationships: \n"
    ),
    "cot": (
        "Text: {chunk}\nQuery:  Let's think step by step. First, identify any physical assets mentioned in the text. Next, determine if any locations or ownership details are provided for these physical assets. Then, determine if the commodities related to the physical assets are provided. Finally, summarize the relationships between each physical asset, its location, its ownership and its commodity. "
        + _FORMAT + _REL_PLURAL
    ),
    "generated_knowledge_0": (
        "You are an expert in analyzing texts for information about physical assets, locations, ownerships, and commodities. "
        "Provide a brief summary of how to identify these elements in a text and the relationships between them."
    ),
    "generated_knowledge_1": (
        _GK_HEAD
        + "You are a virtual assistant with expertise in extracting specific information from text. "
        "A physical asset is an asset with a geographical location.\n\n"
        "Text: {chunk}\nQuery: Identify any physical assets mentioned in the text. "
        "List them in the format:\nphysical assets: [ ]"
    ),
    "generated_knowledge_2": (
        _GK_HEAD
        + "Using the extracted physical assets:\n"
        "physical assets: {physical_assets}\n\n"
        "Text: {chunk}\nQuery: Identify any locations mentioned in the text associated with the physical assets. "
        "List them in the format:\nlocations: [ ]"
    ),
    "generated_knowledge_3": (
        _GK_HEAD
        + "Using the extracted physical assets and locations:\n"
        "physical assets: {physical_assets}\nlocations: {locations}\n\n"
        "Text: {chunk}\nQuery: Identify any ownership details mentioned in the text associated with the physical assets. "
        "List them in the format:\nownerships: [ ]"
    ),
    "generated_knowledge_4": (
        _GK_HEAD
        + "Using the extracted physical assets, locations, and ownerships:\n"
        "physical assets: {physical_assets}\nlocations: {locations}\nownerships: {ownerships}\n\n"
        "Text: {chunk}\nQuery: Identify any commodities mentioned in the text associated with the physical assets. "
        "List them in the format:\ncommodities: [ ]"
    ),
    "generated_knowledge_5": (
        _GK_HEAD
        + "Using the extracted physical assets, locations, ownerships, and commodities:\n"
        "physical assets: {physical_assets}\nlocations: {locations}\nownerships: {ownerships}\ncommodities: {commodities}\n\n"
        "Text: {chunk}\nQuery: Identify the relationships between the physical assets, locations, ownerships, and commodities. "
        "Format the relationships as follows:\nrelationships: [asset: '', location: '', ownership: '', commodities: '']"
    ),
    "prompt_chain_1": (
        "Text: {chunk}\nQuery: Does this text mention any physical assets? "
        "If yes, please specify them in the following format:\n"
        "physical assets: [ ]"
    ),
    "prompt_chain_2": (
        "physical assets: {physical_assets}\n"
        "Text: {chunk}\nQuery: Does this text mention any locations associated with the physical assets? "
        "If yes, please specify them in the following format:\n"
        "locations: [ ]"
    ),
    "prompt_chain_3": (
        "physical assets: {physical_assets}\nlocations: {locations}\n"
        "Text: {chunk}\nQuery: Does this text mention any ownership details associated with the physical assets? "
        "If yes, please specify them in the following format:\n"
        "ownerships: [ ]"
    ),
    "prompt_chain_4": (
        "physical assets: {physical_assets}\nlocations: {locations}\nownerships: {ownerships}\n"
        "Text: {chunk}\nQuery: Does this text mention any commodities associated with the physical assets? "
        "If yes, please specify them in the following format:\n"
        "commodities: [ ]"
    ),
    "prompt_chain_5": (
        "physical assets: {physical_assets}\nlocations: {locations}\nownerships: {ownerships}\ncommodities: {commodities}\n"
        "Text: {chunk}\nQuery: Identify the relationships between the physical assets, locations, ownerships, and commodities. "
        "Format the relationships as follows:\nrelationships: [asset: '', location: '', ownership: '', commodities: '']"
    ),
    "role": (
        _ROLE
        + "Now, let's analyze the following text:\n"
        "Text: {chunk}\nQuery: Does this text mention any physical assets, locations or ownerships? Does the text mention what commodity the physical asset is being used for?\n"
        + _MUST_FORMAT
        + "Additionally, identify the relationships between them, specifying the location of each physical asset, the ownership details, the commodity the physical asset is used for and the status of the physical asset. "
        "Format the relationships as follows:\nrelationships: [asset: '', location: '', ownership: '', commodity: '']."
    ),
    "role_instructional": (
        _ROLE + _DEFINITIONS
        + "Now, let's analyze the following text:\n"
        "Text: {chunk}\nQuery: Does this text mention any physical assets, locations or ownerships? Does the text mention what commodity the physical asset is being used for?\n"
        + _MUST_FORMAT + _REL_SINGULAR_STRICT
    ),
    "irz_cot": _ROLE + _DEFINITIONS + _QUERY_IRZ + _MUST_FORMAT + _REL_SINGULAR_STRICT,
    # conditional blocks are spliced in at {dynamic_blocks} by render_prompt
    "dynamic": _ROLE + "{dynamic_blocks}" + _QUERY_IRZ + _MUST_FORMAT + _REL_SINGULAR_STRICT,
    "clean_cell": (
        "You are an expert data cleaner. Your task is to clean and standardize the following text. You will be provided each cell value one by one with its respective column name. Apply the following cleaning steps:\n"
        "\n"
        "   - Standardize entries in the commodity column to have a consistent format. For example, \"Silver, Gold, Lead, Zinc\" should be the standard format for each commodity, separated by commas and no extra spaces.\n"
        "   - Ensure all entries in the status column are in a consistent format, removing redundant words or phrases.\n"
        "   - All entries should be in title case.\n"
        "   - Do not make any changes to the 'Countries' column.\n"
        "   - In the 'commodity' column, if chemical symbols are given, change these to the element name corresponding to the chemical symbol.\n"
        "   - In all the columns, ensure each entry is properly formatted without redundant commas and extra spaces. For example, \"ExxonMobil\" should not be separated by extra commas.\n"
        "   - Remove any leading or trailing spaces in all columns.\n"
        "   - All individual commodities should be separated by a comma.\n"
        "   - The 'location' column should only consist of geographical regions and locations.\n"
        "   - A physical asset is a tangible resource that a company owns and uses in the production of goods and services. Examples of physical assets are facilities, equipment, infrastructure, etc. If there are any entries in the physical asset column that do not fit the description of a physical asset, put N/A in the corresponding cell.\n"
        "   - A commodity is what the physical asset is being used for. If there are any entries in the commodity column that do not fit the description of a commodity, put N/A next to the word in brackets.\n"
        "   - Ensure that there are no repetitions or redundant entries in any of the cells.\n"
        "   - If any cell has 'not specified', it should be empty.\n"
        "   - All cells should have standardized entries.\n"
        "\n"
        "Process the following text according to these instructions. Return only the new cleaned cell value, nothing else.\n"
        "Column: {column}\nValue: {value}"
    ),
    "country_extract": (
        "You are an expert in geographical locations. Given the location information provided, identify the countries mentioned in the location. Return the list of countries separated by commas. If no country is mentioned, return \"N/A\".\n"
        "Location: {location}"
    ),
    "table_improved": (
        _ROLE
        + "A physical asset is a tangible resource that a company owns in a location and uses in the production of goods and services. Examples of physical assets are all examples of 'Plant' in the tables (Wateree, Greensville and Colonial Trail West are all physical assets).\n"
        "A financial asset or other non-physical asset should never be included as a physical asset. Examples of financial assets include equity commitments, corporate facilities, accounts receivable, and short-term investments. Never include these in the list of physical assets.\n"
        "A commodity is what the physical asset is being used for. The status of a physical asset gives information on whether the asset is operational, under construction or in end-of-life."
        "Now, let's analyze the following text:\n"
        "Text: {text}\nQuery: Let's think step-by-step. Does this text mention any physical assets, locations or ownerships? Does the text mention what commodity the physical asset is being used for?\n"
        "Does the text mention the status of the physical asset? Examples of status include whether the asset is operational, under construction or in end-of-life."
        "If yes, you must specify them in the following format:\n"
        "physical assets: [ ]\nlocations: [ ]\nownerships: [ ]\ncommodities: []\nstatus: []\n"
        "Additionally, identify all the relationships between them, specifying the location of each physical asset, the ownership details, the commodity the physical asset is used for and the status of the physical asset. Do not leave out any relationships. "
        "Format the relationships as follows:\nrelationships: [asset: '', location: '', ownership: '', commodity: '', status: '']. Do not output anything else."
    ),
    "rav_classify": (
        "Classify whether the following two values are similar or dissimilar. Answer yes or no.\n"
        "Value A: {db}\nValue B: {web}"
    ),
    "rav_answer": (
        "Based only on the following snippets, state the {attribute} of {asset}. Answer concisely.\n"
        "{snippets}"
    ),
}

TEMPLATES: Mapping[str, PromptTemplate] = MappingProxyType(
    {tid: PromptTemplate(tid, body) for tid, body in _BODIES.items()}
)

#: Templates that take a chunk of filing text and return the full entity format.
EXTRACTION_TEMPLATES = (
    "zero_shot", "one_shot", "few_shot", "cot", "role", "role_instructional",
    "irz_cot", "dynamic", "table_improved",
)
#: Multi-step techniques run as a sequence of templates.
CHAINED_TECHNIQUES = {
    "prompt_chain": tuple(f"prompt_chain_{i}" for i in range(1, 6)),
    "generated_knowledge": tuple(f"generated_knowledge_{i}" for i in range(0, 6)),
}


def get_template(template_id: str) -> PromptTemplate:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise UnknownTemplateError(template_id) from None


def _truthy(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in {"1", "true", "yes", "y", "on"}
    return bool(value)


def render_prompt(template_id: str, bindings: Mapping[str, object]) -> str:
    """Substitute bindings into a template.

    For ``dynamic`` the boolean bindings contains_assets, contains_commodities
    and contains_locations switch their instruction blocks on (absent = off).
    """
    tpl = get_template(template_id)
    values = {k: str(v) for k, v in bindings.items()}
    if template_id == "dynamic":
        values["dynamic_blocks"] = "".join(
            block for flag, block in DYNAMIC_FLAGS.items() if _truthy(bindings.get(flag, False))
        )

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise MissingBindingError(template_id, name)
        return values[name]

    return _PLACEHOLDER.sub(sub, tpl.body)
