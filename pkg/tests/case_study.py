"""Director death-date comparison case: masked unrolling, five retrieved documents,
completion and answer responses."""

from cooprag.core import Document

QUESTION = "Which film has the director who died later, 45 Calibre Echo or Bons Baisers De Hong Kong?"
GOLD = "Bons Baisers De Hong Kong"

UNROLL_RESPONSE = """Hop Count: 4

Reasoning Structure: find both directors, find both death dates, compare.

Sub-questions:
SUB_Q1: Who directed the film 45 Calibre Echo?
SUB_Q2: Who directed the film Bons Baisers De Hong Kong?
SUB_Q3: What was the date of death for the director of 45 Calibre Echo?
SUB_Q4: What was the date of death for the director of Bons Baisers De Hong Kong?

Triple Reasoning Chain:
[["45 Calibre Echo", "was directed by", "Bruce M. Mitchell"],
 ["<UNCERTAIN>", "was directed by", "<UNCERTAIN>"],
 ["<UNCERTAIN>", "died on", "<UNCERTAIN>"],
 ["Yvan Chiffre", "died on", "<UNCERTAIN>"],
 ["Between the directors of the two films", "the one who died later is", "<FILL>"]]
"""

DOCUMENTS = (
    Document("45cal", "45 Calibre Echo", "45 Calibre Echo is a 1932 American western film directed by Bruce M. Mitchell and starring Jack Perrin, Ben Corbett and Elinor Fair."),
    Document("bbhk", "Bons Baisers de Hong Kong", "Bons Baisers de Hong Kong also known as From Hong Kong with Love is a 1975 French film directed by Yvan Chiffre."),
    Document("yvan", "Yvan Chiffre", "Yvan Chiffre 3 March 1936 27 September 2016 was a French director, producer, and stunt coordinator."),
    Document("bruce", "Bruce M. Mitchell", "Bruce M. Mitchell November 16, 1883 September 26, 1952 was an American film director and writer active during the silent film era from 1914 to 1934."),
    Document("won", "Won in the Clouds", "Won in the Clouds is a 1928 American silent film directed by Bruce M. Mitchell and starring Al Wilson."),
)

COMPLETION_RESPONSE = """Reconstructed Reasoning Chain:
[["45 Calibre Echo", "was directed by", "Bruce M. Mitchell"],
 ["Bons Baisers de Hong Kong", "was directed by", "Yvan Chiffre"],
 ["Bruce M. Mitchell", "died on", "September 26, 1952"],
 ["Yvan Chiffre", "died on", "27 September 2016"],
 ["Between the directors of the two films", "the one who died later is", "Yvan Chiffre"]]"""

ANSWER_RESPONSE = "The later death is Yvan Chiffre's.\nGENERATED_ANSWER:\n<<ANS>>Bons Baisers De Hong Kong<<ANS>>"
