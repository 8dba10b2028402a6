"""Freeze reference word-tokenizer output into tokenizer_golden.jsonl.

Each case is a list of sentences. Sentence segmentation is given explicitly
(punkt models are not needed); every sentence goes through NLTKWordTokenizer,
which is what nltk.word_tokenize applies after sentence splitting.

    python3 gen_tokenizer_golden.py > ../data/tokenizer_golden.jsonl
"""
import json

from nltk.tokenize import NLTKWordTokenizer

CASES = [
    [""],
    ["fire engulfed, rapidly destroyed"],
    ["Трагедия музея"],
    ["The fire engulfed the museum and rapidly destroyed it."],
    ["It was a tragedy.", "Staff repeatedly complained about funding cuts."],
    ["Don't you think it's a cultural tragedy?"],
    ["They can't and won't stop; we'll see."],
    ["Good muffins cost $3.88 (roughly 3,36 euros) in New York."],
    ["Ukraine's government is “openly neo-Nazi” and “pro-Nazi,” controlled by “little Nazis,” President Vladimir V. Putin of Russia says."],
    ["\"Quoted words\" start the sentence."],
    ["He said 'hello' to them."],
    ["Wait... what happened -- exactly?"],
    ["The loss is incalculable!", "A lobotomy of Brazilian memory."],
    ["Пожар уничтожил музей.", "Это трагедия для страны!"],
    ["Музей, который был основан в 1818 году, сгорел: потеря невосполнима."],
    ["«Открыто неонацистское» правительство — так сказал президент."],
    ["Items: apples, pears & plums; also #tags and @users at 50% off."],
    ["Revenue grew from 1,000 to 2,500 in 2019."],
    ["See [1] and {2} and <3>."],
    ["A dash — here and an en dash – there."],
    ["The U.S. economy grew."],
    ["I'm sure you'd agree they're right and you've seen it."],
    ["Wanna go?", "Gonna be fine."],
    ["Multiple   spaces\tand\nnewlines here."],
    ["Ends with a quote.\""],
    ["What?!", "Really."],
    ["e-mail and well-known terms stay whole"],
    ["oppositionist Alexei Navalny's supporters"],
    ["Is there any use of expressive language or imagery that could influence the reader's feelings?"],
    ["Есть ли в тексте эмоционально окрашенные слова или выражения?"],
    ["It cost 5*3 units."],
    ["Price: $5, tax: 10%."],
]

tok = NLTKWordTokenizer()
for sentences in CASES:
    text = " ".join(sentences)
    tokens = [t for s in sentences for t in tok.tokenize(s)]
    print(json.dumps({"text": text, "tokens": tokens}, ensure_ascii=False))
