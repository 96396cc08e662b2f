import numpy as np
import pytest

from mixlift.mcmc import McmcModel
from mixlift.model import HistTable, ModelError
from mixlift.modelfile import (
    build_mcmc,
    build_rhm,
    build_variational,
    from_json_document,
    parse_model,
    serialize_model,
    to_json_document,
)

HIST_MODEL = """\
ATOMS
atom A binary 3
atom B binary 2
PARFACTORS
parfactor g0 A,B histogram {"rows":[[[[3,0],[2,0]],1.0],[[[2,1],[1,1]],0.5]]}
EXTENDIBILITY
extend A 40
"""

MIX_MODEL = """\
ATOMS
atom A binary 6
atom X continuous 4 -3.0 3.0
PARFACTORS
parfactor m0 A mixture_discrete {"weights":[0.4,0.6],"params":{"A":[[0.7,0.3],[0.2,0.8]]}}
parfactor m1 X mixture_kde {"weights":[1.0],"kdes":{"X":[{"centers":[0.0,0.5],"bandwidth":0.3,"weights":null}]}}
"""

LATENT_MODEL = """\
ATOMS
atom Job binary 10
atom HP continuous 8 -3.0 3.0
PARFACTORS
parfactor hp HP mixture_kde {"weights":[0.5,0.5],"weight_latent":"p_D","kdes":{"HP":[{"centers":[-0.3],"bandwidth":0.2,"weights":null},{"centers":[0.1],"bandwidth":0.15,"weights":null}]}}
parfactor job Job bernoulli_theta {"latent":"p_job"}
LATENT-COUPLINGS
coupling job_house normal_diff p_job,p_D {"mu":0.0,"sigma2":0.04}
latent p_D mixture_weight hp 0.0 1.0
latent p_job bernoulli_param Job 0.0 1.0
"""


def test_parse_and_canonical_round_trip():
    doc = parse_model(HIST_MODEL)
    assert set(doc.atoms) == {"A", "B"}
    assert doc.atoms["A"].population == 3
    assert isinstance(doc.parfactors[0].potential, HistTable)
    assert doc.extendibility == {"A": 40}
    canonical = serialize_model(doc)
    again = serialize_model(parse_model(canonical))
    assert again == canonical


def test_json_document_round_trip():
    doc = parse_model(MIX_MODEL)
    js = to_json_document(doc)
    doc2 = from_json_document(js)
    assert to_json_document(doc2) == js
    assert serialize_model(doc2) == serialize_model(doc)


def test_latent_sections_round_trip():
    doc = parse_model(LATENT_MODEL)
    assert len(doc.couplings) == 1
    assert doc.couplings[0].latents == ("p_job", "p_D")
    assert {l.name for l in doc.latents} == {"p_D", "p_job"}
    canonical = serialize_model(doc)
    assert serialize_model(parse_model(canonical)) == canonical


def test_build_rhm_and_variational_views():
    rhm = build_rhm(parse_model(HIST_MODEL))
    assert set(rhm.atoms) == {"A", "B"}
    var = build_variational(parse_model(MIX_MODEL))
    assert var.names == ["m0", "m1"]
    assert var.potentials[0].k == 2
    with pytest.raises(ModelError):
        build_variational(parse_model(HIST_MODEL))
    with pytest.raises(ModelError):
        build_rhm(parse_model(LATENT_MODEL))


def test_build_mcmc_view():
    model = build_mcmc(parse_model(LATENT_MODEL))
    assert isinstance(model, McmcModel)
    hp = next(p for p in model.potentials if p.name == "hp")
    assert hp.weight_latent == "p_D"
    job = next(p for p in model.potentials if p.name == "job")
    assert job.theta_latent == "p_job"
    # The component indicator of a weight-latent potential is itself sampled.
    assert model.latent_names() == ["hp", "p_D", "p_job"]


def test_mixture_weights_survive_round_trip():
    doc = parse_model(MIX_MODEL)
    doc2 = parse_model(serialize_model(doc))
    m0 = doc2.parfactors[0].potential
    np.testing.assert_allclose(m0.weights, [0.4, 0.6])
    np.testing.assert_allclose(m0.params["A"], [[0.7, 0.3], [0.2, 0.8]])


def test_parse_errors():
    with pytest.raises(ModelError):
        parse_model("atom A binary 3\n")  # content before a section header
    with pytest.raises(ModelError):
        parse_model("ATOMS\natom A binary 3\natom A binary 3\n")
    with pytest.raises(ModelError):
        parse_model("ATOMS\natom A weird 3\n")
    with pytest.raises(ModelError):
        parse_model("ATOMS\natom A binary 3\nPARFACTORS\nparfactor g0 A,B histogram {}\n")
    with pytest.raises(ModelError):
        parse_model('ATOMS\natom A binary 3\nPARFACTORS\nparfactor g0 A nope {}\n')
    with pytest.raises(ModelError):
        parse_model("ATOMS\natom A binary 3\nEXTENDIBILITY\nextend A\n")
