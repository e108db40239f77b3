#!/usr/bin/env python3
"""Builds the offline fixture corpus in fixtures/notes.jsonl.

The corpus imitates the output format of the note-generation prompts: narrative
psychiatric notes with inline label tokens placed after the text they annotate,
a smaller set of notes carrying only NEGATIVE evidence, and a pool of
single clinical sentences that mention none of the target factors.  A small
share of records carries the kinds of defects seen in real model output
(hallucinated factors, drifted token format, spans labelled with the wrong
factor) so that the cleaning stages have something to do.

Usage: python3 scripts/make_fixtures.py [--seed 7] [--out fixtures/notes.jsonl]
"""

import argparse
import json
import random

WORKED_NOTE = """Patient presentation:
The patient is a 45-year old female [PATIENT_FACTOR(POSITIVE):older_age] who presents with a history of mental illness in her family, with her sister suffering from bipolar disorder [PATIENT_FACTOR(POSITIVE):family_member_mental_disorder]. She reports a childhood marked by abuse, specifically physical abuse from her father [PATIENT_FACTOR(POSITIVE):childhood_abuse]. The patient further elaborates that she experienced emotional neglect from her mother for several years [PATIENT_FACTOR(POSITIVE):childhood_abuse].

Illness history:
The patient's psychiatric illness began at the age of 18 with the onset of major depressive episodes. Over the past 27 years [ILLNESS_FACTOR(POSITIVE):long_illness_duration], she has experienced multiple episodes of severe depression, including thoughts of ending her life [ILLNESS_FACTOR(POSITIVE):suicidality]. Despite the severity of her illness, she has never been hospitalized [ILLNESS_FACTOR(NEGATIVE):multiple_hospitalizations]. The patient has a history of recurrent depressive episodes [ILLNESS_FACTOR(POSITIVE):recurrent_episodes].

Treatment history:
The patient's treatment history has involved a variety of interventions. She has been prescribed multiple antidepressant medications over the years [TREATMENT_FACTOR(POSITIVE):multiple_antidepressants] at varying dosages, including increases in dose [TREATMENT_FACTOR(POSITIVE):antidepressant_dosage_increase]. However, she has experienced side effects such as weight gain, sedation, and sexual dysfunction, prompting changes in medication regimens [TREATMENT_FACTOR(POSITIVE):side_effects]. The patient has also been engaged in multiple psychotherapies [TREATMENT_FACTOR(POSITIVE):multiple_psychotherapies].

Current presentation:
During today's session, the patient reports some improvement in her symptoms. She notes a decrease in depressive symptoms such as sadness and hopelessness. However, she still experiences anhedonia [ILLNESS_FACTOR(POSITIVE):anhedonia] and struggles with maintaining positive relationships. There is evidence of physical comorbidity as the patient shares that she was recently diagnosed with diabetes [ILLNESS_FACTOR(POSITIVE):physical_comorbidity]. Additionally, she has a comorbid diagnosis of generalized anxiety disorder [ILLNESS_FACTOR(POSITIVE):mental_comorbidity]. The patient denies any current substance abuse [ILLNESS_FACTOR(NEGATIVE):substance_abuse].

Discussion and plan:
The patient's depressive symptoms seem to have an early onset [ILLNESS_FACTOR(POSITIVE):illness_early_onset], starting at 18 years old. Her history of multiple episodes of depression, suicidal ideation, and non-adherence to medication regimens suggest a severe and chronic illness course [ILLNESS_FACTOR(POSITIVE):severe_illness, ILLNESS_FACTOR(POSITIVE):recurrent_episodes, ILLNESS_FACTOR(POSITIVE):non_adherence]. We will continue to monitor her progress and consider further adjustments to her medication regimen based on her response and any side effects. Therapy sessions will focus on enhancing coping skills, reducing anhedonia, and improving interpersonal relationships. We will also explore strategies to address the impact of childhood abuse on her current mental health. Emergency contact information will be reviewed, emphasizing the importance of seeking help during times of intense distress or suicidal thoughts. Follow-up appointments will be scheduled to assess treatment response and assess any additional needs."""

DOMAIN = {
    "older_age": "PATIENT",
    "family_member_mental_disorder": "PATIENT",
    "abuse": "PATIENT",
    "childhood_abuse": "PATIENT",
    "long_illness_duration": "ILLNESS",
    "severe_illness": "ILLNESS",
    "suicidality": "ILLNESS",
    "multiple_hospitalizations": "ILLNESS",
    "recurrent_episodes": "ILLNESS",
    "improvement": "ILLNESS",
    "physical_comorbidity": "ILLNESS",
    "mental_comorbidity": "ILLNESS",
    "substance_abuse": "ILLNESS",
    "anhedonia": "ILLNESS",
    "illness_early_onset": "ILLNESS",
    "multiple_antidepressants": "TREATMENT",
    "antidepressant_dosage_increase": "TREATMENT",
    "multiple_psychotherapies": "TREATMENT",
    "side_effects": "TREATMENT",
    "non_adherence": "TREATMENT",
}

SECTION_OF = {
    "older_age": 0,
    "family_member_mental_disorder": 0,
    "childhood_abuse": 0,
    "abuse": 0,
    "long_illness_duration": 1,
    "severe_illness": 1,
    "suicidality": 1,
    "multiple_hospitalizations": 1,
    "recurrent_episodes": 1,
    "illness_early_onset": 1,
    "substance_abuse": 1,
    "multiple_antidepressants": 2,
    "antidepressant_dosage_increase": 2,
    "multiple_psychotherapies": 2,
    "side_effects": 2,
    "non_adherence": 2,
    "improvement": 3,
    "anhedonia": 3,
    "physical_comorbidity": 3,
    "mental_comorbidity": 3,
}

SECTIONS = [
    "Patient presentation:",
    "Illness history:",
    "Treatment history:",
    "Current presentation:",
    "Discussion and plan:",
]

CLAUSES = {
    ("older_age", "POSITIVE"): [
        "{P} is a {age_old}-year-old {gender}",
        "The patient is a {age_old} year old {gender}",
        "At {age_old} years of age, {p} lives alone",
        "{P} is an elderly {gender} in {pp} late seventies",
        "This {age_old}-year-old retired {job}",
        "{P} celebrated {pp} {age_old}th birthday last month",
        "{P} is now {age_old} and walks with a frame",
    ],
    ("older_age", "NEGATIVE"): [
        "The patient is a {age_young}-year-old {gender}",
        "{P} is a young {gender} aged {age_young}",
        "This {age_young} year old {job}",
        "{P} is in {pp} early twenties",
        "The patient is {age_young} and studying at college",
    ],
    ("family_member_mental_disorder", "POSITIVE"): [
        "{P} reports that {pp} {relative} was diagnosed with {disorder}",
        "There is a family history of {disorder}, with {pp} {relative} affected",
        "{PP} {relative} suffers from {disorder}",
        "{P} mentions that {pp} {relative} has long struggled with {disorder}",
        "Family history is significant for {disorder} in {pp} {relative}",
        "{PP} {relative} was admitted to a psychiatric ward with {disorder}",
        "{P} explains that {pp} {relative} also lives with {disorder}",
    ],
    ("family_member_mental_disorder", "NEGATIVE"): [
        "There is no known family history of mental illness",
        "{P} denies any psychiatric history in {pp} family",
        "None of {pp} relatives have been diagnosed with a mental disorder",
        "{P} is not aware of any family members with {disorder}",
        "Family psychiatric history is unremarkable",
    ],
    ("childhood_abuse", "POSITIVE"): [
        "{P} experienced physical abuse from {pp} {parent} as a child",
        "{P} describes emotional neglect from {pp} {parent} throughout {pp} childhood",
        "{P} was sexually abused by a {abuser} at the age of {child_age}",
        "{P} grew up in a violent household where {pp} {parent} beat {o} regularly",
        "{P} recalls being locked in {pp} room for days as a young child",
        "{P} was placed in foster care after severe neglect in early childhood",
        "{P} discloses that {pp} {parent} hit {o} when {p} was {child_age}",
    ],
    ("childhood_abuse", "NEGATIVE"): [
        "{P} describes a happy and secure childhood",
        "{P} denies any abuse or neglect during childhood",
        "{P} was raised in a loving home by both parents",
        "There is no history of childhood maltreatment",
        "{P} reports a supportive upbringing without trauma",
    ],
    ("abuse", "POSITIVE"): [
        "{P} was in an abusive relationship with {pp} former partner",
        "{P} reports ongoing domestic violence at home",
        "{P} was assaulted by a colleague last year",
        "{P} recalls being severely bullied at work",
        "{P} describes years of coercive control by {pp} ex-partner",
        "{P} was robbed and beaten in the street two years ago",
    ],
    ("abuse", "NEGATIVE"): [
        "{P} denies any history of abuse",
        "{P} feels safe at home and denies domestic violence",
        "There is no history of physical or emotional abuse in adulthood",
        "{P} reports healthy and respectful relationships",
        "{P} has never been harmed by a partner",
    ],
    ("non_adherence", "POSITIVE"): [
        "{P} admits to frequently missing doses of {pp} {ad}",
        "{P} stopped taking {pp} medication without consulting {pp} doctor",
        "{P} has been inconsistent with {pp} prescribed treatment",
        "{P} discontinued {ad} after two weeks because {p} distrusts medication",
        "{P} often forgets to take {pp} tablets",
        "{P} threw away {pp} {ad} prescription",
    ],
    ("non_adherence", "NEGATIVE"): [
        "{P} takes {pp} medication exactly as prescribed",
        "{P} has been fully adherent to {pp} {ad}",
        "{P} reports good compliance with treatment",
        "{P} has never missed a dose",
        "{P} collects {pp} prescriptions on time every month",
    ],
    ("side_effects", "POSITIVE"): [
        "{P} experienced {se} on {ad}",
        "{AD} caused significant {se}",
        "{P} reports {se} and {se2} since starting {ad}",
        "Treatment with {ad} was complicated by {se}",
        "{P} complains of {se} which {p} attributes to {pp} medication",
        "{P} had to stop {ad} because of {se}",
    ],
    ("side_effects", "NEGATIVE"): [
        "{P} has tolerated {ad} well without side effects",
        "{P} denies any adverse effects from {pp} medication",
        "No side effects have been reported with {ad}",
        "{P} reports no {se} on the current regimen",
        "{AD} has been well tolerated",
    ],
    ("recurrent_episodes", "POSITIVE"): [
        "{P} has had {n_ep} distinct depressive episodes",
        "{P} experienced multiple periods of depression over the years",
        "This is {pp} {ordinal} episode of major depression",
        "{P} describes recurrent relapses of low mood every few years",
        "{P} has a history of recurrent depressive episodes",
        "{P} relapsed again after a brief period of wellness",
    ],
    ("recurrent_episodes", "NEGATIVE"): [
        "This is {pp} first episode of depression",
        "{P} has had no previous depressive episodes",
        "{P} reports a single episode of depression with no relapse",
        "There have been no prior episodes",
        "{P} was well until this presentation",
    ],
    ("multiple_antidepressants", "POSITIVE"): [
        "{P} has tried {ad}, {ad2} and {ad3}",
        "{P} has been prescribed multiple antidepressants over the years",
        "Previous trials include {ad} and {ad2}",
        "{P} was switched from {ad} to {ad2} and later to {ad3}",
        "{P} has taken several different antidepressant medications",
        "{P} has been on {ad}, {ad2} and {ad3} in the past",
    ],
    ("multiple_antidepressants", "NEGATIVE"): [
        "{P} has only ever been prescribed {ad}",
        "{AD} is the first antidepressant {p} has tried",
        "{P} has not tried any other antidepressants",
        "{P} is currently on {pp} first medication trial",
        "{P} remains on {ad}, {pp} only antidepressant to date",
    ],
    ("multiple_psychotherapies", "POSITIVE"): [
        "{P} has completed courses of {th} and {th2}",
        "{P} has engaged in multiple psychotherapies",
        "{P} previously attended {th} and later {th2}",
        "{P} has tried several forms of talking therapy",
        "{P} has had {th}, {th2} and group work over the last decade",
    ],
    ("multiple_psychotherapies", "NEGATIVE"): [
        "{P} has never received any psychotherapy",
        "{P} has only attended a brief course of {th}",
        "{P} declined referral for psychological therapy",
        "{P} has not engaged in any talking therapies",
    ],
    ("physical_comorbidity", "POSITIVE"): [
        "{P} was recently diagnosed with {phys}",
        "{P} has a history of {phys} and {phys2}",
        "{P} suffers from {phys}",
        "Past medical history includes {phys}",
        "{P} has been living with {phys} for several years",
        "{P} attends a clinic for {phys}",
    ],
    ("physical_comorbidity", "NEGATIVE"): [
        "{P} has no significant medical history",
        "{P} is physically healthy",
        "{P} denies any chronic physical illness",
        "There are no physical comorbidities",
        "{P} takes no regular medication for physical conditions",
    ],
    ("long_illness_duration", "POSITIVE"): [
        "{P} has been depressed for over {years} years",
        "Over the past {years} years {p} has struggled with low mood",
        "{P} describes a long history of depression spanning {years} years",
        "{PP} symptoms have persisted since {pp} {decade}",
        "{P} has lived with depression for most of {pp} adult life",
    ],
    ("long_illness_duration", "NEGATIVE"): [
        "{PP} symptoms began only {months} months ago",
        "This is a recent onset of depression within the last few months",
        "{P} first noticed low mood {weeks} weeks ago",
        "{PP} low mood started shortly after {pp} move this spring",
    ],
    ("severe_illness", "POSITIVE"): [
        "{P} presents with severe depressive symptoms",
        "{PP} PHQ-9 score is {phq_high}, indicating severe depression",
        "{P} is barely able to get out of bed or eat",
        "{PP} illness has been severe and debilitating",
        "{P} has marked psychomotor retardation",
        "{P} has been unable to work or care for {self} for months",
    ],
    ("severe_illness", "NEGATIVE"): [
        "{PP} symptoms are mild",
        "{PP} PHQ-9 score is {phq_low}, in the mild range",
        "{P} continues to function well at work despite low mood",
        "{PP} depression is of mild to moderate severity",
    ],
    ("anhedonia", "POSITIVE"): [
        "{P} no longer enjoys {hobby}",
        "{P} has lost interest in activities {p} used to love",
        "{P} describes an inability to feel pleasure",
        "{P} has stopped {hobby} because nothing feels rewarding",
        "{P} reports a pervasive lack of enjoyment",
        "{P} gets nothing out of {hobby} anymore",
    ],
    ("anhedonia", "NEGATIVE"): [
        "{P} still enjoys {hobby}",
        "{P} continues to take pleasure in {hobby}",
        "{P} looks forward to {hobby} at the weekend",
        "{P} describes enjoying time with friends",
    ],
    ("suicidality", "POSITIVE"): [
        "{P} reports thoughts of ending {pp} life",
        "{P} has made {n_att} previous suicide attempts",
        "{P} admits to passive suicidal ideation",
        "{P} took an overdose of {ad} last year",
        "{P} feels that {p} would be better off dead",
        "{P} has researched ways to kill {self}",
    ],
    ("suicidality", "NEGATIVE"): [
        "{P} denies any suicidal ideation",
        "{P} denies intent to end {pp} own life",
        "There is no history of self-harm or suicide attempts",
        "{P} has no thoughts of harming {self}",
        "{P} is future oriented and denies wanting to die",
    ],
    ("antidepressant_dosage_increase", "POSITIVE"): [
        "The dose of {ad} was increased to {dose} mg",
        "{PP} {ad} was gradually titrated up",
        "{AD} was raised from {dose_low} mg to {dose} mg",
        "{P} required an increase in {pp} antidepressant dosage",
        "{PP} GP doubled the dose of {ad}",
    ],
    ("antidepressant_dosage_increase", "NEGATIVE"): [
        "The dose of {ad} has remained unchanged",
        "{P} has been on a stable dose of {ad}",
        "There has been no change to {pp} dosage",
        "{AD} was kept at the starting dose",
    ],
    ("multiple_hospitalizations", "POSITIVE"): [
        "{P} has been admitted to hospital {n_adm} times",
        "{P} had several psychiatric admissions",
        "{P} was hospitalized repeatedly during {pp} twenties",
        "{P} has a history of multiple inpatient stays",
        "{P} has spent time on an acute ward on {n_adm} occasions",
    ],
    ("multiple_hospitalizations", "NEGATIVE"): [
        "{P} has never been hospitalized",
        "{P} has no history of psychiatric admission",
        "{P} was treated entirely in the community",
        "There have been no inpatient admissions",
    ],
    ("mental_comorbidity", "POSITIVE"): [
        "{P} also has a diagnosis of {mental}",
        "{P} suffers from comorbid {mental}",
        "{P} experiences frequent {mental_sym}",
        "{P} meets criteria for {mental}",
        "{P} was diagnosed with {mental} as a teenager",
    ],
    ("mental_comorbidity", "NEGATIVE"): [
        "{P} has no other psychiatric diagnoses",
        "There is no evidence of anxiety or other mental disorder",
        "{P} denies symptoms of {mental}",
        "Screening for {mental} was negative",
    ],
    ("improvement", "POSITIVE"): [
        "{P} reports some improvement in {pp} mood",
        "{PP} symptoms have improved considerably",
        "{P} feels much better since starting {ad}",
        "{P} is sleeping better and has more energy",
        "{P} says the fog has finally begun to lift",
    ],
    ("improvement", "NEGATIVE"): [
        "{P} has not noticed any improvement",
        "{PP} mood has not improved despite treatment",
        "{PP} symptoms have worsened over recent weeks",
        "{P} feels no better than before",
    ],
    ("substance_abuse", "POSITIVE"): [
        "{P} drinks heavily every night",
        "{P} has a long history of {substance} misuse",
        "{P} uses {substance} to cope with stress",
        "{P} admits to daily {substance} use",
        "{P} battles with {substance} addiction",
        "{P} drinks a bottle of vodka most days",
    ],
    ("substance_abuse", "NEGATIVE"): [
        "{P} denies any current substance abuse",
        "{P} does not drink alcohol or use drugs",
        "{P} has been abstinent from {substance} for years",
        "{P} denies illicit drug use",
    ],
    ("illness_early_onset", "POSITIVE"): [
        "{PP} first depressive episode occurred at the age of {onset_young}",
        "{P} has been depressed since adolescence",
        "{PP} symptoms began in {pp} early teens",
        "{P} was first treated for depression at {onset_young}",
    ],
    ("illness_early_onset", "NEGATIVE"): [
        "{PP} depression first began at the age of {onset_late}",
        "{P} had no mental health problems until {pp} forties",
        "Onset of depression was in later life",
    ],
}

FILLERS = [
    [
        "{P} attended the appointment with {pp} {relative}.",
        "{P} works as a {job}.",
        "{P} lives with {pp} partner and two children.",
        "{P} was referred by {pp} GP for assessment.",
        "{P} grew up in {town} and moved here for work.",
    ],
    [
        "{P} describes low mood, poor sleep and reduced appetite.",
        "{PP} mood has fluctuated over the past year.",
        "{P} has struggled with concentration at work.",
        "{P} reports feeling tired most of the day.",
    ],
    [
        "{P} is currently prescribed {ad} {dose} mg daily.",
        "{P} has seen a psychologist in the past.",
        "{P} was started on {ad} by {pp} GP.",
        "Previous notes were reviewed before the appointment.",
    ],
    [
        "{P} was appropriately dressed and engaged well.",
        "Speech was normal in rate and volume.",
        "{P} maintained good eye contact throughout.",
        "There was no evidence of psychosis.",
        "{PP} thoughts were logical and goal directed.",
    ],
    [
        "We will review {o} again in four weeks.",
        "A letter will be sent to {pp} GP.",
        "We will monitor for side effects and review the medication.",
        "Therapy will focus on coping skills and relapse prevention.",
        "Bloods were requested to rule out physical causes.",
        "A crisis plan was agreed with {o} today.",
        "We discussed the risks and benefits of treatment.",
    ],
]

NO_LABEL = [
    "Patient enjoys gardening.",
    "{P} arrived on time for the appointment.",
    "{P} was accompanied by {pp} {relative} today.",
    "{P} works part time as a {job}.",
    "The appointment took place in the outpatient clinic.",
    "{P} lives in a rented flat in {town}.",
    "{P} was casually dressed and polite.",
    "Speech was of normal rate, tone and volume.",
    "{P} maintained appropriate eye contact.",
    "{P} was oriented to time, place and person.",
    "The consultation was conducted by telephone.",
    "{P} has two children who are both at school.",
    "{P} recently started a new job in {town}.",
    "A copy of this letter will be sent to {pp} GP.",
    "{P} was seen together with the care coordinator.",
    "{P} asked about local volunteering opportunities.",
    "{P} brought a list of questions to the meeting.",
    "{P} plans to visit {pp} {relative} next month.",
    "The next appointment has been booked for {month}.",
    "{P} has a dog and walks it every morning.",
    "{P} is studying for a qualification in {subject}.",
    "{P} was interviewed with the help of an interpreter.",
    "{P} gave consent for information sharing.",
    "{P} is right handed.",
    "Blood pressure was recorded as {bp}.",
    "{P} asked for the appointment to be moved to {month}.",
    "The care plan was updated during the session.",
    "{P} described {pp} daily routine in detail.",
    "{P} cycles to work most days.",
    "{P} reads the newspaper every morning.",
]

SLOTS = {
    "gender": ["woman", "man", "female", "male"],
    "job": ["teacher", "nurse", "builder", "accountant", "shop assistant", "driver", "cleaner", "engineer", "farmer", "chef"],
    "relative": ["mother", "father", "sister", "brother", "aunt", "uncle", "grandmother", "cousin", "son", "daughter"],
    "parent": ["mother", "father", "stepfather", "stepmother"],
    "abuser": ["neighbour", "family friend", "teacher", "relative"],
    "disorder": ["bipolar disorder", "schizophrenia", "depression", "generalised anxiety", "ptsd", "obsessive compulsive disorder", "postnatal depression", "an eating disorder"],
    "ad": ["sertraline", "citalopram", "fluoxetine", "mirtazapine", "venlafaxine", "duloxetine", "escitalopram", "paroxetine", "amitriptyline", "vortioxetine"],
    "se": ["weight gain", "nausea", "sedation", "sexual dysfunction", "headaches", "insomnia", "dizziness", "dry mouth", "emotional blunting", "sweating"],
    "th": ["cognitive behavioural therapy", "counselling", "interpersonal therapy", "psychodynamic therapy", "mindfulness based therapy", "behavioural activation", "EMDR"],
    "phys": ["diabetes", "hypertension", "fibromyalgia", "asthma", "chronic back pain", "hypothyroidism", "epilepsy", "arthritis", "COPD", "migraine"],
    "mental": ["generalised anxiety disorder", "panic disorder", "social anxiety", "ADHD", "borderline personality disorder", "PTSD", "OCD", "an eating disorder"],
    "mental_sym": ["panic attacks", "obsessional thoughts", "flashbacks", "episodes of binge eating"],
    "substance": ["alcohol", "cannabis", "cocaine", "heroin", "amphetamine", "benzodiazepine"],
    "hobby": ["painting", "reading", "football", "cooking", "gardening", "music", "swimming", "going to church", "seeing friends", "knitting"],
    "decade": ["teens", "twenties", "early thirties", "student days"],
    "ordinal": ["third", "fourth", "fifth", "sixth"],
    "town": ["Oxford", "Banbury", "Reading", "Witney", "Aylesbury", "Bicester"],
    "month": ["January", "March", "May", "July", "September", "November"],
    "subject": ["accounting", "nursing", "history", "carpentry"],
}


def fill(template, rng, pron):
    subj, obj, poss, refl = pron
    values = {
        "P": subj.capitalize(),
        "p": subj,
        "PP": poss.capitalize(),
        "pp": poss,
        "o": obj,
        "self": refl,
        "age_old": str(rng.randint(62, 88)),
        "age_young": str(rng.randint(19, 34)),
        "child_age": str(rng.randint(5, 13)),
        "years": str(rng.randint(10, 35)),
        "months": str(rng.randint(2, 6)),
        "weeks": str(rng.randint(3, 9)),
        "n_ep": rng.choice(["three", "four", "five", "several"]),
        "n_att": rng.choice(["two", "three", "several"]),
        "n_adm": rng.choice(["three", "four", "five", "several"]),
        "phq_high": str(rng.randint(21, 27)),
        "phq_low": str(rng.randint(5, 9)),
        "dose": str(rng.choice([100, 150, 200, 40, 60, 225])),
        "dose_low": str(rng.choice([25, 50, 20])),
        "onset_young": str(rng.randint(12, 17)),
        "onset_late": str(rng.randint(45, 60)),
        "bp": "%d/%d" % (rng.randint(110, 150), rng.randint(65, 95)),
    }
    ads = rng.sample(SLOTS["ad"], 3)
    values["ad"], values["ad2"], values["ad3"] = ads
    values["AD"] = ads[0].capitalize()
    ses = rng.sample(SLOTS["se"], 2)
    values["se"], values["se2"] = ses
    ths = rng.sample(SLOTS["th"], 2)
    values["th"], values["th2"] = ths
    phys = rng.sample(SLOTS["phys"], 2)
    values["phys"], values["phys2"] = phys
    for key in ("gender", "job", "relative", "parent", "abuser", "disorder", "mental",
                "mental_sym", "substance", "hobby", "decade", "ordinal", "town", "month", "subject"):
        values[key] = rng.choice(SLOTS[key])
    return template.format(**values)


def token(factor, polarity):
    return "[%s_FACTOR(%s):%s]" % (DOMAIN[factor], polarity, factor)


def lower_first(text):
    if text.startswith(("I ", "PHQ", "EMDR")):
        return text
    return text[0].lower() + text[1:]


def labelled_sentence(rng, pron, labels, defects):
    """labels: list of (factor, polarity) realised as clauses in one sentence."""
    parts = []
    for i, (factor, polarity) in enumerate(labels):
        clause = fill(rng.choice(CLAUSES[(factor, polarity)]), rng, pron)
        if defects["mislabel"] and i == 0:
            # Wrong label attached to otherwise valid text.
            other = rng.choice([f for f in DOMAIN if f != factor])
            factor = other
        tok = token(factor, polarity)
        if defects["hallucinate"] and i == len(labels) - 1:
            tok = "[ILLNESS_FACTOR(%s):%s]" % (polarity, rng.choice(["insomnia", "low_self_esteem", "grief", "loneliness"]))
        elif defects["drift"] and i == len(labels) - 1:
            tok = "[%s_FACTOR:%s(%s)]" % (DOMAIN[factor], factor, polarity)
        if i == 0:
            parts.append("%s %s" % (clause, tok))
        else:
            joiner = rng.choice([" and ", ", and ", ", while ", " but ", "; "])
            parts.append("%s%s %s" % (joiner, lower_first(clause), tok))
    tail = ""
    if rng.random() < 0.15:
        tail = rng.choice([" which was discussed at length", " according to {pp} own account", " as documented previously"])
        tail = tail.replace("{pp}", pron[2])
    return "".join(parts) + tail + "."


def compound_sentence(rng, pron):
    factors = rng.sample(["severe_illness", "recurrent_episodes", "long_illness_duration", "suicidality"], 2)
    clause = fill(rng.choice([
        "{PP} history of relapses, admissions and self-harm suggests a severe and chronic course",
        "Taken together {pp} presentation points to a protracted and serious illness",
    ]), rng, pron)
    toks = ", ".join(token(f, "POSITIVE")[1:-1] for f in factors)
    return "%s [%s]." % (clause, toks)


PRONOUNS = [("she", "her", "her", "herself"), ("he", "him", "his", "himself")]


def make_note(rng, negative_only):
    pron = rng.choice(PRONOUNS)
    factors = list(DOMAIN)
    n_labels = rng.randint(6, 11)
    chosen = rng.sample(factors, n_labels)
    per_section = {i: [] for i in range(5)}
    for f in chosen:
        if negative_only:
            polarity = "NEGATIVE"
        else:
            polarity = "NEGATIVE" if rng.random() < 0.3 else "POSITIVE"
        per_section[SECTION_OF[f]].append((f, polarity))
    paragraphs = []
    for s, header in enumerate(SECTIONS):
        sentences = []
        items = per_section[s]
        rng.shuffle(items)
        while items:
            take = 2 if len(items) >= 2 and rng.random() < 0.35 else 1
            group, items = items[:take], items[take:]
            defects = {
                "mislabel": rng.random() < 0.04,
                "hallucinate": rng.random() < 0.02,
                "drift": rng.random() < 0.015,
            }
            sentences.append(labelled_sentence(rng, pron, group, defects))
        if s == 1 and not negative_only and rng.random() < 0.1:
            sentences.append(compound_sentence(rng, pron))
        n_fill = rng.randint(0, 2) if s < 4 else rng.randint(2, 4)
        fillers = rng.sample(FILLERS[s], min(n_fill, len(FILLERS[s])))
        for text in fillers:
            sentences.insert(rng.randint(0, len(sentences)), fill(text, rng, pron))
        if not sentences:
            sentences.append(fill(rng.choice(FILLERS[s]), rng, pron))
        paragraphs.append(header + "\n" + " ".join(sentences))
    return "\n\n".join(paragraphs)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--standard", type=int, default=115)
    ap.add_argument("--negative", type=int, default=25)
    ap.add_argument("--no-label", type=int, default=300)
    ap.add_argument("--out", default="fixtures/notes.jsonl")
    args = ap.parse_args()
    rng = random.Random(args.seed)

    records = [{"id": "worked_note", "prompt_kind": "standard", "text": WORKED_NOTE}]
    for i in range(args.standard):
        records.append({"id": "std_%04d" % i, "prompt_kind": "standard", "text": make_note(rng, False)})
    for i in range(args.negative):
        records.append({"id": "neg_%04d" % i, "prompt_kind": "negative_only", "text": make_note(rng, True)})
    seen = set()
    i = 0
    while i < args.no_label:
        pron = rng.choice(PRONOUNS)
        text = fill(rng.choice(NO_LABEL), rng, pron)
        if text in seen and rng.random() < 0.8:
            continue
        seen.add(text)
        records.append({"id": "nolabel_%04d" % i, "prompt_kind": "no_label_sentences", "text": text})
        i += 1
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
